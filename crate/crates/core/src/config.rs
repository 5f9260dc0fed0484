//! TOML run configuration and `--set key=value` overrides.
//!
//! Every section is optional; missing physical constants fall back to the
//! reference parameter set ([`SystemParams::reference`]). Unknown keys are
//! rejected so that typos do not silently run the default.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use serde::Deserialize;

use crate::covariance::SimulationControl;
use crate::error::{Error, Result};
use crate::meanfield::MeanControl;
use crate::ode::StepControl;
use crate::params::{
    taylor_coefficients, CavityGeometry, CouplingCoefficients, ParamName, SystemParams, TaylorExpansion,
};
use crate::spectrum::SpectrumControl;
use crate::sweep::{Axis, Engine, InitialCovariance, Metric, PointSettings, SweepSpec};

const DEFAULT_WEAK_RATIO: f64 = 1e-2;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOscillators {
    omega_m1: Option<f64>,
    omega_m2: Option<f64>,
    gamma_m1: Option<f64>,
    gamma_m2: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCavity {
    detuning: Option<f64>,
    kappa: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDrive {
    amplitude: Option<f64>,
    eta_d: Option<f64>,
    omega_d: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBath {
    nbar: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCouplings {
    g1: Option<f64>,
    g1_1: Option<f64>,
    g1_2: Option<f64>,
    g2: Option<f64>,
    g2_1: Option<f64>,
    g2_2: Option<f64>,
    g3: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGeometry {
    cavity_length: f64,
    membrane_reflectivity: f64,
    laser_wavelength: f64,
    #[serde(default = "speed_of_light")]
    light_speed: f64,
    #[serde(default)]
    membrane_equilibrium: f64,
    /// Physical first-oscillator angular frequency used as the frequency unit.
    omega_m1_physical: f64,
    /// Zero-point lengths of the two oscillators.
    x_zpf: [f64; 2],
}

fn speed_of_light() -> f64 {
    299_792_458.0
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSimulation {
    horizon: Option<f64>,
    window_periods: Option<f64>,
    output_dt: Option<f64>,
    initial_covariance: Option<InitialCovariance>,
    rtol: Option<f64>,
    atol: Option<f64>,
    initial_step: Option<f64>,
    max_step: Option<f64>,
    min_step: Option<f64>,
    max_steps: Option<usize>,
    divergence_bound: Option<f64>,
    covariance_bound: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFloquet {
    weak_coupling_ratio: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    engine: Engine,
    metrics: Vec<Metric>,
    axis1: Axis,
    axis2: Option<Axis>,
    #[serde(default)]
    fixed: BTreeMap<ParamName, f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    oscillators: RawOscillators,
    #[serde(default)]
    cavity: RawCavity,
    #[serde(default)]
    drive: RawDrive,
    #[serde(default)]
    bath: RawBath,
    couplings: Option<RawCouplings>,
    geometry: Option<RawGeometry>,
    #[serde(default)]
    simulation: RawSimulation,
    spectrum: Option<SpectrumControl>,
    #[serde(default)]
    floquet: RawFloquet,
    sweep: Option<RawSweep>,
}

/// One `--set key=value` pair.
///
/// Bare keys name a model parameter (`kappa`, `eta_d`, …); dotted keys address
/// any other config entry (`simulation.horizon`, `sweep.axis1.count`).
#[derive(Debug, Clone, PartialEq)]
pub struct Override {
    pub key: String,
    pub value: String,
}

impl FromStr for Override {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (k, v) =
            s.split_once('=').ok_or_else(|| Error::Config(format!("override '{s}' is not of the form key=value")))?;
        let (key, value) = (k.trim(), v.trim());
        if key.is_empty() || value.is_empty() {
            return Err(Error::Config(format!("override '{s}' is not of the form key=value")));
        }
        Ok(Self { key: key.to_string(), value: value.to_string() })
    }
}

impl std::fmt::Display for Override {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}={}", self.key, self.value)
    }
}

/// Fully resolved configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub params: SystemParams,
    pub settings: PointSettings,
    pub weak_coupling_ratio: f64,
    pub sweep: Option<SweepSpec>,
    /// Present when the couplings were derived from `[geometry]`.
    pub expansion: Option<TaylorExpansion>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            params: SystemParams::reference(),
            settings: PointSettings::default(),
            weak_coupling_ratio: DEFAULT_WEAK_RATIO,
            sweep: None,
            expansion: None,
        }
    }
}

impl Config {
    pub fn load(path: &Path, overrides: &[Override]) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, overrides).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str, overrides: &[Override]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let mut param_sets = Vec::new();
        for o in overrides {
            if o.key.contains('.') {
                set_dotted(&mut table, &o.key, parse_value(&o.value))
                    .map_err(|m| Error::Config(format!("--set {o}: {m}")))?;
            } else {
                let name: ParamName = o.key.parse().map_err(|e: Error| Error::Config(format!("--set {o}: {e}")))?;
                let v: f64 =
                    o.value.parse().map_err(|_| Error::Config(format!("--set {o}: '{}' is not a number", o.value)))?;
                param_sets.push((name, v, o));
            }
        }
        let raw: RawConfig =
            table.try_into().map_err(|e: toml::de::Error| Error::Config(anchor_serde_error(text, &e)))?;
        let mut cfg = build(raw).map_err(|e| anchor(text, e))?;
        for (name, v, _) in &param_sets {
            cfg.params.set(*name, *v);
        }
        cfg.params.validate().map_err(|e| {
            let msg = e.to_string();
            match param_sets.iter().rev().find(|(n, _, _)| field_of(&msg) == Some(n.as_str())) {
                Some((_, _, o)) => Error::InvalidParameter(format!("--set {o}: {}", strip_kind(&msg))),
                None => anchor(text, e),
            }
        })?;
        if let Some(s) = &cfg.sweep {
            s.validate().map_err(|e| anchor(text, e))?;
        }
        Ok(cfg)
    }
}

fn build(raw: RawConfig) -> Result<Config> {
    let r = SystemParams::reference();
    let o = raw.oscillators;
    let omega_m1 = o.omega_m1.unwrap_or(r.omega_m1);
    let (couplings, expansion) = match (raw.couplings, raw.geometry) {
        (Some(_), Some(_)) => {
            return Err(Error::Config("give either [couplings] or [geometry], not both".into()));
        }
        (Some(c), None) => {
            let g1 = c.g1.unwrap_or(r.couplings.g1_1);
            let g2 = c.g2.unwrap_or(r.couplings.g2_1);
            (
                CouplingCoefficients {
                    g1_1: c.g1_1.unwrap_or(g1),
                    g1_2: c.g1_2.unwrap_or(g1),
                    g2_1: c.g2_1.unwrap_or(g2),
                    g2_2: c.g2_2.unwrap_or(g2),
                    g3: c.g3.unwrap_or(r.couplings.g3),
                },
                None,
            )
        }
        (None, Some(g)) => {
            if !(g.omega_m1_physical > 0.0) || g.x_zpf.iter().any(|x| !(*x > 0.0)) {
                return Err(Error::InvalidParameter("omega_m1_physical and x_zpf must be > 0".into()));
            }
            let geometry = CavityGeometry::new(
                g.cavity_length,
                g.membrane_reflectivity,
                g.laser_wavelength,
                g.light_speed,
                g.membrane_equilibrium,
            )?;
            let expansion = taylor_coefficients(&geometry)?;
            (expansion.to_dimensionless(g.omega_m1_physical, g.x_zpf), Some(expansion))
        }
        (None, None) => (r.couplings, None),
    };
    let params = SystemParams {
        omega_m1,
        omega_m2: o.omega_m2.unwrap_or(r.omega_m2),
        gamma_m1: o.gamma_m1.unwrap_or(r.gamma_m1),
        gamma_m2: o.gamma_m2.unwrap_or(r.gamma_m2),
        detuning: raw.cavity.detuning.unwrap_or(r.detuning),
        kappa: raw.cavity.kappa.unwrap_or(r.kappa),
        drive: raw.drive.amplitude.unwrap_or(r.drive),
        eta_d: raw.drive.eta_d.unwrap_or(r.eta_d),
        omega_d: raw.drive.omega_d.unwrap_or(r.omega_d),
        nbar: raw.bath.nbar.unwrap_or(r.nbar),
        couplings,
    };

    let s = raw.simulation;
    let d = PointSettings::default();
    let ds = StepControl::default();
    let step = StepControl {
        rtol: s.rtol.unwrap_or(ds.rtol),
        atol: s.atol.unwrap_or(ds.atol),
        initial_step: s.initial_step.or(ds.initial_step),
        max_step: s.max_step.unwrap_or(ds.max_step),
        min_step: s.min_step.unwrap_or(ds.min_step),
        max_steps: s.max_steps.unwrap_or(ds.max_steps),
    };
    step.validate()?;
    let dm = MeanControl::default();
    let mean = MeanControl {
        step,
        output_dt: s.output_dt.or(dm.output_dt),
        divergence_bound: s.divergence_bound.unwrap_or(dm.divergence_bound),
    };
    let settings = PointSettings {
        horizon: s.horizon.unwrap_or(d.horizon),
        window_periods: s.window_periods.unwrap_or(d.window_periods),
        initial_covariance: s.initial_covariance.unwrap_or(d.initial_covariance),
        simulation: SimulationControl {
            mean,
            covariance_bound: s.covariance_bound.unwrap_or(d.simulation.covariance_bound),
        },
        spectrum: raw.spectrum.unwrap_or_default(),
    };
    for (name, v) in [("horizon", settings.horizon), ("window_periods", settings.window_periods)] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::InvalidParameter(format!("{name} must be > 0 (got {v})")));
        }
    }
    if let Some(dt) = mean.output_dt {
        if !(dt > 0.0) {
            return Err(Error::InvalidParameter(format!("output_dt must be > 0 (got {dt})")));
        }
    }
    settings.spectrum.quadrature.validate()?;

    let weak = raw.floquet.weak_coupling_ratio.unwrap_or(DEFAULT_WEAK_RATIO);
    if !(weak > 0.0) {
        return Err(Error::InvalidParameter(format!("weak_coupling_ratio must be > 0 (got {weak})")));
    }
    let sweep = raw.sweep.map(|w| SweepSpec {
        axis1: w.axis1,
        axis2: w.axis2,
        fixed: w.fixed,
        metrics: w.metrics,
        engine: w.engine,
    });
    Ok(Config { params, settings, weak_coupling_ratio: weak, sweep, expansion })
}

fn parse_value(s: &str) -> toml::Value {
    format!("v = {s}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(s.to_string()))
}

fn set_dotted(table: &mut toml::Table, key: &str, value: toml::Value) -> std::result::Result<(), String> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().unwrap();
    let mut cur = table;
    for p in parts {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| format!("'{p}' is not a table"))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// Leading identifier of a validation message such as `kappa must be > 0`.
fn field_of(msg: &str) -> Option<&str> {
    let body = strip_kind(msg);
    let end = body.find(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))?;
    (end > 0).then(|| &body[..end])
}

fn strip_kind(msg: &str) -> &str {
    msg.split_once(": ").map(|(_, rest)| rest).unwrap_or(msg)
}

/// Config key that stores a given parameter.
fn config_key(field: &str) -> &str {
    match field {
        "drive" => "amplitude",
        other => other,
    }
}

fn find_line(text: &str, key: &str) -> Option<usize> {
    text.lines().position(|l| {
        let l = l.trim_start();
        l.strip_prefix(key).is_some_and(|rest| rest.trim_start().starts_with('='))
    })
}

/// Prefixes a validation error with the config line that set the offending key.
fn anchor(text: &str, e: Error) -> Error {
    let msg = e.to_string();
    let line = field_of(&msg).and_then(|f| find_line(text, config_key(f)));
    let wrap = |m: String| match line {
        Some(n) => format!("line {}: {m}", n + 1),
        None => m,
    };
    match e {
        Error::InvalidParameter(m) => Error::InvalidParameter(wrap(m)),
        Error::Config(m) => Error::Config(wrap(m)),
        Error::Domain(m) => Error::Domain(wrap(m)),
        other => other,
    }
}

/// `try_into` on an already parsed table loses spans; recover the line from the
/// key named in the message.
fn anchor_serde_error(text: &str, e: &toml::de::Error) -> String {
    let msg = e.message().trim().to_string();
    let key =
        msg.split('`').nth(1).filter(|k| !k.is_empty() && k.chars().all(|c| c.is_ascii_alphanumeric() || c == '_'));
    match key.and_then(|k| find_line(text, k).or_else(|| find_section(text, k))) {
        Some(n) => format!("line {}: {msg}", n + 1),
        None => msg,
    }
}

fn find_section(text: &str, name: &str) -> Option<usize> {
    text.lines().position(|l| {
        let l = l.trim();
        l.starts_with('[') && l.trim_matches(|c| c == '[' || c == ']').rsplit('.').next() == Some(name)
    })
}
