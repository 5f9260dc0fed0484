//! Time averaging and parameter sweeps over one or two axes.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::{self, CovarianceState, SimulationControl};
use crate::error::{Error, Result};
use crate::floquet;
use crate::io::fmt_f64;
use crate::meanfield::MeanState;
use crate::params::{ParamName, SystemParams};
use crate::spectrum::{self, SpectralContext, SpectrumControl};

pub const MIN_AVERAGE_SAMPLES: usize = 10;

/// Trapezoidal mean of `values` over the trailing `window` of `times`.
///
/// The window start is linearly interpolated when it falls between samples.
pub fn time_average(times: &[f64], values: &[f64], window: f64) -> Result<f64> {
    if times.len() != values.len() {
        return Err(Error::InvalidParameter(format!("{} times but {} values", times.len(), values.len())));
    }
    if !(window > 0.0) {
        return Err(Error::WindowTooShort(format!("window must be > 0 (got {window})")));
    }
    let n = times.len();
    if n < 2 {
        return Err(Error::InsufficientSamples { needed: MIN_AVERAGE_SAMPLES, got: n });
    }
    let t_end = times[n - 1];
    let t_start = t_end - window;
    // absorb rounding in the end-anchored grid
    let slack = 1e-9 * window.max(t_end.abs());
    if t_start < times[0] - slack {
        return Err(Error::WindowTooShort(format!("window {window} exceeds series span {}", t_end - times[0])));
    }
    let first = times.partition_point(|&t| t < t_start - slack);
    let inside = n - first;
    if inside < MIN_AVERAGE_SAMPLES {
        return Err(Error::InsufficientSamples { needed: MIN_AVERAGE_SAMPLES, got: inside });
    }
    let mut acc = 0.0;
    let mut start = times[first];
    if first > 0 && times[first] > t_start {
        start = t_start;
        let (t0, t1) = (times[first - 1], times[first]);
        let v0 = values[first - 1] + (values[first] - values[first - 1]) * (t_start - t0) / (t1 - t0);
        acc += 0.5 * (v0 + values[first]) * (t1 - t_start);
    }
    for i in first..n - 1 {
        acc += 0.5 * (values[i] + values[i + 1]) * (times[i + 1] - times[i]);
    }
    Ok(acc / (t_end - start))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Engine {
    TimeDomain,
    Analytic,
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Engine::TimeDomain => "time-domain",
            Engine::Analytic => "analytic",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Metric {
    Sq,
    Ed,
    K,
    Stable,
    Duan,
}

impl Metric {
    pub const ALL: [Metric; 5] = [Metric::Sq, Metric::Ed, Metric::K, Metric::Stable, Metric::Duan];

    pub fn as_str(&self) -> &'static str {
        match self {
            Metric::Sq => "Sq",
            Metric::Ed => "ED",
            Metric::K => "K",
            Metric::Stable => "stable",
            Metric::Duan => "duan",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown metric '{s}' (expected one of Sq, ED, K, stable, duan)")))
    }
}

impl TryFrom<String> for Metric {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Metric> for String {
    fn from(m: Metric) -> String {
        m.as_str().to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub name: ParamName,
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl Axis {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::Config(format!("axis '{}' needs count ≥ 1", self.name)));
        }
        // a single-point axis is allowed only as a degenerate range
        if self.count == 1 {
            if !(self.min.is_finite() && self.min == self.max) {
                return Err(Error::Config(format!(
                    "axis '{}' with count = 1 needs min = max (got {} .. {})",
                    self.name, self.min, self.max
                )));
            }
            return Ok(());
        }
        if !(self.min.is_finite() && self.max.is_finite() && self.max > self.min) {
            return Err(Error::Config(format!(
                "axis '{}' needs finite min < max (got {} .. {})",
                self.name, self.min, self.max
            )));
        }
        Ok(())
    }

    /// Evenly spaced, endpoints included exactly.
    pub fn values(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.min];
        }
        let step = (self.max - self.min) / (self.count - 1) as f64;
        (0..self.count).map(|i| if i + 1 == self.count { self.max } else { self.min + step * i as f64 }).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub axis1: Axis,
    pub axis2: Option<Axis>,
    pub fixed: BTreeMap<ParamName, f64>,
    pub metrics: Vec<Metric>,
    pub engine: Engine,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        self.axis1.validate()?;
        if let Some(a2) = &self.axis2 {
            a2.validate()?;
            if a2.name == self.axis1.name {
                return Err(Error::Config(format!("both axes sweep '{}'", a2.name)));
            }
        }
        if self.metrics.is_empty() {
            return Err(Error::Config("sweep needs at least one metric".into()));
        }
        if self.engine == Engine::TimeDomain && self.metrics.contains(&Metric::Stable) {
            return Err(Error::Config(
                "metric 'stable' is the Routh–Hurwitz verdict and needs engine = \"analytic\"".into(),
            ));
        }
        Ok(())
    }

    /// Grid points in row-major order, `axis1` outermost.
    pub fn points(&self) -> Vec<Vec<f64>> {
        let v1 = self.axis1.values();
        match &self.axis2 {
            None => v1.into_iter().map(|x| vec![x]).collect(),
            Some(a2) => {
                let v2 = a2.values();
                v1.iter().flat_map(|&x| v2.iter().map(move |&y| vec![x, y])).collect()
            }
        }
    }

    pub fn axes(&self) -> Vec<&Axis> {
        std::iter::once(&self.axis1).chain(self.axis2.as_ref()).collect()
    }
}

/// How each point is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointSettings {
    pub horizon: f64,
    /// Averaging window in modulation periods.
    pub window_periods: f64,
    pub initial_covariance: InitialCovariance,
    pub simulation: SimulationControl,
    pub spectrum: SpectrumControl,
}

impl Default for PointSettings {
    fn default() -> Self {
        Self {
            horizon: 500.0,
            window_periods: 10.0,
            initial_covariance: InitialCovariance::Vacuum,
            simulation: SimulationControl::default(),
            spectrum: SpectrumControl::default(),
        }
    }
}

impl PointSettings {
    pub fn window(&self, params: &SystemParams) -> Result<f64> {
        let period = params.modulation_period().ok_or_else(|| {
            Error::WindowTooShort("averaging window is given in modulation periods but omega_d = 0".into())
        })?;
        Ok(self.window_periods * period)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialCovariance {
    Vacuum,
    Thermal,
}

impl InitialCovariance {
    pub fn state(&self, params: &SystemParams) -> CovarianceState {
        match self {
            InitialCovariance::Vacuum => CovarianceState::vacuum(),
            InitialCovariance::Thermal => CovarianceState::thermal(params.nbar),
        }
    }
}

/// Trailing-window averages of one time-domain run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeAverages {
    pub sq: f64,
    pub ed: f64,
    pub duan: f64,
    pub sqm: f64,
    pub var_q_minus: f64,
    pub var_p_minus: f64,
    pub var_p_plus: f64,
    pub k: f64,
    pub max_sq_step: f64,
}

pub fn time_domain_averages(params: &SystemParams, settings: &PointSettings) -> Result<TimeAverages> {
    let window = settings.window(params)?;
    let sim = covariance::simulate(
        &MeanState::zero(),
        &settings.initial_covariance.state(params),
        params,
        settings.horizon,
        &settings.simulation,
    )?;
    let t = sim.times();
    let avg = |v: Vec<f64>| time_average(t, &v, window);
    let var_p_minus = avg(sim.variance_series(|v| v.p_minus))?;
    let var_p_plus = avg(sim.variance_series(|v| v.p_plus))?;
    Ok(TimeAverages {
        sq: avg(sim.series(|m| m.sq))?,
        ed: avg(sim.series(|m| m.ed))?,
        duan: avg(sim.series(|m| m.duan))?,
        sqm: avg(sim.series(|m| m.sqm))?,
        var_q_minus: avg(sim.variance_series(|v| v.q_minus))?,
        var_p_minus,
        var_p_plus,
        k: spectrum::k_from_variances(var_p_minus, var_p_plus)?,
        max_sq_step: sim.audit.max_sq,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", content = "message", rename_all = "lowercase")]
pub enum PointStatus {
    Ok,
    Unstable(String),
    Failed(String),
}

impl PointStatus {
    fn label(&self) -> &'static str {
        match self {
            PointStatus::Ok => "ok",
            PointStatus::Unstable(_) => "unstable",
            PointStatus::Failed(_) => "failed",
        }
    }

    fn message(&self) -> &str {
        match self {
            PointStatus::Ok => "",
            PointStatus::Unstable(m) | PointStatus::Failed(m) => m,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub index: usize,
    pub coords: Vec<f64>,
    /// Aligned with [`SweepTable::metrics`]; `None` only when `status` says why.
    pub values: Vec<Option<f64>>,
    pub status: PointStatus,
}

impl SweepRow {
    pub fn metric(&self, table: &SweepTable, m: Metric) -> Option<f64> {
        table.metrics.iter().position(|x| *x == m).and_then(|i| self.values[i])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub axes: Vec<ParamName>,
    pub metrics: Vec<Metric>,
    pub engine: Engine,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    /// Header `axis…,metric…,status,message`; failed metrics are empty cells.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let mut header: Vec<String> = self.axes.iter().map(|a| a.to_string()).collect();
        header.extend(self.metrics.iter().map(|m| m.to_string()));
        header.extend(["status".to_string(), "message".to_string()]);
        writeln!(w, "{}", header.join(","))?;
        for row in &self.rows {
            let mut cells: Vec<String> = row.coords.iter().map(|v| fmt_f64(*v)).collect();
            cells.extend(row.values.iter().map(|v| v.map(fmt_f64).unwrap_or_default()));
            cells.push(row.status.label().to_string());
            cells.push(csv_text(row.status.message()));
            writeln!(w, "{}", cells.join(","))?;
        }
        Ok(())
    }

    pub fn column(&self, m: Metric) -> Option<Vec<Option<f64>>> {
        let i = self.metrics.iter().position(|x| *x == m)?;
        Some(self.rows.iter().map(|r| r.values[i]).collect())
    }
}

fn csv_text(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\"").replace('\n', " "))
    } else {
        s.to_string()
    }
}

fn point_params(base: &SystemParams, spec: &SweepSpec, coords: &[f64]) -> Result<SystemParams> {
    let mut p = *base;
    for (name, v) in &spec.fixed {
        p.set(*name, *v);
    }
    for (axis, v) in spec.axes().iter().zip(coords) {
        p.set(axis.name, *v);
    }
    p.validate()?;
    Ok(p)
}

fn evaluate_time_domain(p: &SystemParams, metrics: &[Metric], s: &PointSettings) -> Result<Vec<Option<f64>>> {
    let a = time_domain_averages(p, s)?;
    Ok(metrics
        .iter()
        .map(|m| match m {
            Metric::Sq => Some(a.sq),
            Metric::Ed => Some(a.ed),
            Metric::Duan => Some(a.duan),
            Metric::K => Some(a.k),
            Metric::Stable => None,
        })
        .collect())
}

fn evaluate_analytic(p: &SystemParams, metrics: &[Metric], s: &PointSettings) -> (Vec<Option<f64>>, PointStatus) {
    let ctx = match SpectralContext::analytic(p) {
        Ok(c) => c,
        Err(e) => return (vec![None; metrics.len()], PointStatus::Failed(e.to_string())),
    };
    let stable = match floquet::stability_check(&ctx.constants, p) {
        Ok(r) => r.stable,
        Err(e) => return (vec![None; metrics.len()], PointStatus::Failed(e.to_string())),
    };
    let flag = Some(if stable { 1.0 } else { 0.0 });
    if !stable {
        let values = metrics.iter().map(|m| if *m == Metric::Stable { flag } else { None }).collect();
        return (values, PointStatus::Unstable("Routh–Hurwitz conditions fail".into()));
    }
    let moments = match spectrum::mean_square_fluctuations(&ctx, &s.spectrum) {
        Ok(m) => m,
        Err(e) => return (vec![None; metrics.len()], PointStatus::Failed(e.to_string())),
    };
    let (q, pm, pp) = (moments.var_q_minus, moments.var_p_minus, moments.var_p_plus);
    let values = metrics
        .iter()
        .map(|m| match m {
            Metric::Sq => Some(1.0 / (q + pm)),
            Metric::Ed => Some(q * pp),
            Metric::Duan => Some(q + pp),
            Metric::K => spectrum::k_from_variances(pm, pp).ok(),
            Metric::Stable => flag,
        })
        .collect();
    (values, PointStatus::Ok)
}

fn evaluate(
    base: &SystemParams,
    spec: &SweepSpec,
    settings: &PointSettings,
    index: usize,
    coords: Vec<f64>,
) -> SweepRow {
    let n = spec.metrics.len();
    let (values, status) = match point_params(base, spec, &coords) {
        Err(e) => (vec![None; n], PointStatus::Failed(e.to_string())),
        Ok(p) => match spec.engine {
            Engine::TimeDomain => match evaluate_time_domain(&p, &spec.metrics, settings) {
                Ok(v) => (v, PointStatus::Ok),
                Err(e) => (vec![None; n], PointStatus::Failed(e.to_string())),
            },
            Engine::Analytic => evaluate_analytic(&p, &spec.metrics, settings),
        },
    };
    SweepRow { index, coords, values, status }
}

/// Evaluates every grid point; point failures land in the status column.
///
/// `threads = None` uses the global rayon pool.
pub fn run_sweep(
    spec: &SweepSpec,
    params: &SystemParams,
    settings: &PointSettings,
    threads: Option<usize>,
) -> Result<SweepTable> {
    spec.validate()?;
    let points = spec.points();
    let work = || -> Vec<SweepRow> {
        points.into_par_iter().enumerate().map(|(i, c)| evaluate(params, spec, settings, i, c)).collect()
    };
    let rows = match threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("cannot start {n} worker threads: {e}")))?
            .install(work),
        None => work(),
    };
    Ok(SweepTable {
        axes: spec.axes().iter().map(|a| a.name).collect(),
        metrics: spec.metrics.clone(),
        engine: spec.engine,
        rows,
    })
}
