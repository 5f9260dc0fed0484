//! Classical first moments: the nonlinear mean-value equations, their
//! integration, and limit-cycle diagnostics.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::fmt_f64;
use crate::ode::{self, IntegrationStats, StepControl};
use crate::params::SystemParams;

/// Mean positions, momenta and the complex cavity amplitude.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MeanState {
    pub q1: f64,
    pub p1: f64,
    pub q2: f64,
    pub p2: f64,
    #[serde(with = "crate::io::complex_parts")]
    pub a: Complex64,
}

impl MeanState {
    pub const DIM: usize = 6;

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.q1, self.p1, self.q2, self.p2, self.a.re, self.a.im]
    }

    pub fn from_slice(y: &[f64]) -> Self {
        Self { q1: y[0], p1: y[1], q2: y[2], p2: y[3], a: Complex64::new(y[4], y[5]) }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.to_array().iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// (Q₁ − Q₂)/√2
    pub fn q_minus(&self) -> f64 {
        (self.q1 - self.q2) * FRAC_1_SQRT_2
    }

    pub fn p_minus(&self) -> f64 {
        (self.p1 - self.p2) * FRAC_1_SQRT_2
    }

    pub fn q_plus(&self) -> f64 {
        (self.q1 + self.q2) * FRAC_1_SQRT_2
    }

    pub fn p_plus(&self) -> f64 {
        (self.p1 + self.p2) * FRAC_1_SQRT_2
    }
}

/// Right-hand side of the mean-value equations.
pub fn mean_drift(state: &MeanState, t: f64, params: &SystemParams) -> MeanState {
    let mut out = [0.0; 6];
    drift_into(&state.to_array(), t, params, &mut out);
    MeanState::from_slice(&out)
}

/// Flat-array form of [`mean_drift`], layout `[Q1, P1, Q2, P2, ReA, ImA]`.
pub(crate) fn drift_into(y: &[f64], t: f64, p: &SystemParams, out: &mut [f64]) {
    let c = &p.couplings;
    let (q1, p1, q2, p2) = (y[0], y[1], y[2], y[3]);
    let a = Complex64::new(y[4], y[5]);
    let n = a.norm_sqr();

    out[0] = p.omega_m1 * p1;
    out[1] = -p.omega_m1 * q1 + (c.g1_1 + c.g3 * q2) * n - 2.0 * c.g2_1 * q1 * n - p.gamma_m1 * p1;
    out[2] = p.omega_m2 * p2;
    out[3] = -p.omega_m2 * q2 + (c.g1_2 + c.g3 * q1) * n - 2.0 * c.g2_2 * q2 * n - p.gamma_m2 * p2;

    let shift = c.g1_1 * q1 - c.g2_1 * q1 * q1 + c.g1_2 * q2 - c.g2_2 * q2 * q2 + c.g3 * q1 * q2;
    let da = -Complex64::new(p.kappa, p.detuning) * a + Complex64::new(0.0, shift) * a + p.drive_amplitude(t);
    out[4] = da.re;
    out[5] = da.im;
}

/// Integration settings for the mean-value equations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanControl {
    pub step: StepControl,
    /// Output spacing; defaults to 1/128 of the modulation period.
    pub output_dt: Option<f64>,
    pub divergence_bound: f64,
}

impl Default for MeanControl {
    fn default() -> Self {
        Self { step: StepControl::default(), output_dt: None, divergence_bound: 1e12 }
    }
}

impl MeanControl {
    pub fn output_spacing(&self, params: &SystemParams) -> f64 {
        self.output_dt.unwrap_or_else(|| params.modulation_period().unwrap_or(2.0 * PI) / 128.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<MeanState>,
    pub horizon: f64,
    pub step: StepControl,
    pub stats: IntegrationStats,
    pub modulation_period: Option<f64>,
}

impl MeanTrajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> Option<&MeanState> {
        self.states.last()
    }

    /// Index of the first sample inside the trailing window `[t_end − window, t_end]`.
    pub fn window_start(&self, window: f64) -> usize {
        let t_end = *self.times.last().unwrap_or(&0.0);
        let cut = t_end - window * (1.0 + 1e-12);
        self.times.partition_point(|&t| t < cut)
    }

    /// Writes `t,Q1,P1,Q2,P2,ReA,ImA`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,Q1,P1,Q2,P2,ReA,ImA")?;
        for (t, s) in self.times.iter().zip(&self.states) {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                fmt_f64(*t),
                fmt_f64(s.q1),
                fmt_f64(s.p1),
                fmt_f64(s.q2),
                fmt_f64(s.p2),
                fmt_f64(s.a.re),
                fmt_f64(s.a.im)
            )?;
        }
        Ok(())
    }
}

pub(crate) fn check_divergence(t: f64, y: &[f64], bound: f64) -> Result<()> {
    let norm = y.iter().fold(0.0_f64, |m, v| if v.is_nan() { f64::INFINITY } else { m.max(v.abs()) });
    if norm > bound {
        return Err(Error::Divergence { t, norm, bound });
    }
    Ok(())
}

/// Integrates the mean-value equations from t = 0 to `horizon`.
pub fn integrate_mean(
    initial: &MeanState,
    params: &SystemParams,
    horizon: f64,
    control: &MeanControl,
) -> Result<MeanTrajectory> {
    params.validate()?;
    if !(horizon > 0.0) {
        return Err(Error::InvalidParameter("horizon must be > 0".into()));
    }
    let dt = control.output_spacing(params);
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter("output_dt must be > 0".into()));
    }
    let times = ode::uniform_grid(0.0, horizon, dt);
    let mut states = vec![MeanState::zero(); times.len()];
    let bound = control.divergence_bound;
    let (_, stats) = ode::integrate(
        |t, y, dy| drift_into(y, t, params, dy),
        0.0,
        &initial.to_array(),
        horizon,
        &control.step,
        &times,
        |i, _, y| {
            states[i] = MeanState::from_slice(y);
            Ok(())
        },
        |t, y| check_divergence(t, y, bound).map(|_| false),
    )?;
    Ok(MeanTrajectory {
        times,
        states,
        horizon,
        step: control.step,
        stats,
        modulation_period: params.modulation_period(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitCycleReport {
    pub rms_q_minus: f64,
    pub rms_p_minus: f64,
    pub rms_q_plus: f64,
    pub rms_p_plus: f64,
    /// Autocorrelation estimate of the Q₊ period, `None` if no peak was found.
    pub dominant_period: Option<f64>,
    /// Largest per-component `max|s(t+T) − s(t)| / max|s|` over the window, with
    /// T the modulation period.
    pub recurrence_error: f64,
}

/// Locking diagnostics over the trailing `window` of a trajectory.
pub fn limit_cycle_metrics(traj: &MeanTrajectory, window: f64) -> Result<LimitCycleReport> {
    let period = traj
        .modulation_period
        .ok_or_else(|| Error::WindowTooShort("trajectory has no modulation period to measure against".into()))?;
    if window < 3.0 * period * (1.0 - 1e-9) {
        return Err(Error::WindowTooShort(format!(
            "window {window} shorter than three modulation periods ({})",
            3.0 * period
        )));
    }
    let span = traj.times.last().copied().unwrap_or(0.0) - traj.times.first().copied().unwrap_or(0.0);
    if window > span * (1.0 + 1e-12) {
        return Err(Error::WindowTooShort(format!("window {window} exceeds trajectory span {span}")));
    }
    let start = traj.window_start(window);
    let times = &traj.times[start..];
    let states = &traj.states[start..];
    if times.len() < 10 {
        return Err(Error::InsufficientSamples { needed: 10, got: times.len() });
    }

    let rms = |f: &dyn Fn(&MeanState) -> f64| -> f64 {
        (states.iter().map(|s| f(s).powi(2)).sum::<f64>() / states.len() as f64).sqrt()
    };
    let q_plus: Vec<f64> = states.iter().map(MeanState::q_plus).collect();
    let dt = times[times.len() - 1] - times[times.len() - 2];

    Ok(LimitCycleReport {
        rms_q_minus: rms(&MeanState::q_minus),
        rms_p_minus: rms(&MeanState::p_minus),
        rms_q_plus: rms(&MeanState::q_plus),
        rms_p_plus: rms(&MeanState::p_plus),
        dominant_period: dominant_period(&q_plus, dt),
        recurrence_error: recurrence_error(times, states, period),
    })
}

/// First autocorrelation maximum after the first zero crossing, in units of
/// the sample spacing `dt`.
pub fn dominant_period(series: &[f64], dt: f64) -> Option<f64> {
    let n = series.len();
    if n < 4 {
        return None;
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let x: Vec<f64> = series.iter().map(|v| v - mean).collect();
    let acf =
        |lag: usize| -> f64 { x[..n - lag].iter().zip(&x[lag..]).map(|(a, b)| a * b).sum::<f64>() / (n - lag) as f64 };
    let max_lag = n / 2;
    let mut crossed = false;
    let mut prev = acf(0);
    if prev <= 0.0 {
        return None;
    }
    let mut lag = 1;
    while lag < max_lag {
        let r = acf(lag);
        if !crossed {
            crossed = r < 0.0;
        } else {
            let next = acf(lag + 1);
            if r >= prev && r >= next && r > 0.0 {
                return Some(lag as f64 * dt);
            }
        }
        prev = r;
        lag += 1;
    }
    None
}

fn recurrence_error(times: &[f64], states: &[MeanState], period: f64) -> f64 {
    let rows: Vec<[f64; 6]> = states.iter().map(MeanState::to_array).collect();
    let t_last = *times.last().unwrap();
    let mut worst_diff = [0.0_f64; 6];
    let mut scale = [0.0_f64; 6];
    for row in &rows {
        for k in 0..6 {
            scale[k] = scale[k].max(row[k].abs());
        }
    }
    for (i, &t) in times.iter().enumerate() {
        if t + period > t_last * (1.0 + 1e-12) {
            break;
        }
        let shifted = interpolate(times, &rows, t + period);
        for k in 0..6 {
            worst_diff[k] = worst_diff[k].max((shifted[k] - rows[i][k]).abs());
        }
    }
    (0..6).filter(|&k| scale[k] > 0.0).map(|k| worst_diff[k] / scale[k]).fold(0.0, f64::max)
}

/// Four-point Lagrange interpolation on a (locally uniform) grid.
fn interpolate(times: &[f64], rows: &[[f64; 6]], t: f64) -> [f64; 6] {
    let n = times.len();
    let j = times.partition_point(|&x| x < t);
    if j < n && (times[j] - t).abs() <= 1e-9 * (1.0 + t.abs()) {
        return rows[j];
    }
    if j > 0 && (times[j - 1] - t).abs() <= 1e-9 * (1.0 + t.abs()) {
        return rows[j - 1];
    }
    let lo = j.saturating_sub(2).min(n.saturating_sub(4));
    let idx = lo..(lo + 4).min(n);
    let mut out = [0.0; 6];
    for a in idx.clone() {
        let mut w = 1.0;
        for b in idx.clone() {
            if a != b {
                w *= (t - times[b]) / (times[a] - times[b]);
            }
        }
        for k in 0..6 {
            out[k] += w * rows[a][k];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::CouplingCoefficients;
    use approx::assert_relative_eq;

    fn bare(gamma: f64) -> SystemParams {
        SystemParams {
            drive: 0.0,
            eta_d: 0.0,
            gamma_m1: gamma,
            gamma_m2: gamma,
            omega_m2: 1.0,
            couplings: CouplingCoefficients::zero(),
            ..SystemParams::reference()
        }
    }

    #[test]
    fn zero_state_without_drive_is_fixed_point() {
        let p = SystemParams { drive: 0.0, ..SystemParams::reference() };
        let d = mean_drift(&MeanState::zero(), 3.7, &p);
        assert_eq!(d, MeanState::zero());
    }

    #[test]
    fn zero_state_only_drive_term_survives() {
        let p = SystemParams::reference();
        let d = mean_drift(&MeanState::zero(), 0.0, &p);
        assert_eq!((d.q1, d.p1, d.q2, d.p2), (0.0, 0.0, 0.0, 0.0));
        assert_eq!(d.a, Complex64::new(250.0 * 5.0, 0.0));
    }

    #[test]
    fn damped_oscillator_closed_form() {
        let gamma = 0.009;
        let p = bare(gamma);
        let init = MeanState { q1: 1.0, ..MeanState::zero() };
        let control = MeanControl {
            step: StepControl { rtol: 1e-10, atol: 1e-12, ..Default::default() },
            output_dt: Some(0.5),
            ..Default::default()
        };
        let traj = integrate_mean(&init, &p, 100.0, &control).unwrap();
        let wd = (1.0 - gamma * gamma / 4.0_f64).sqrt();
        for (t, s) in traj.times.iter().zip(&traj.states) {
            let exact = (-gamma * t / 2.0).exp() * ((wd * t).cos() + gamma / (2.0 * wd) * (wd * t).sin());
            assert!((s.q1 - exact).abs() < 1e-7, "t={t}: {} vs {exact}", s.q1);
        }
        // envelope e^{-γt/2} at t = 100 (cos(ω_d t) ≈ ±1 near multiples of π)
        let t_peak = (100.0 / PI).round() * PI / wd;
        let short = integrate_mean(&init, &p, t_peak, &control).unwrap();
        let q = short.last().unwrap().q1.abs();
        assert_relative_eq!(q, (-gamma * t_peak / 2.0).exp(), max_relative = 1e-3);
    }

    #[test]
    fn energy_never_increases_without_drive() {
        let p = bare(0.05);
        let init = MeanState { q1: 1.0, p1: -0.3, q2: 0.2, p2: 0.8, a: Complex64::new(0.0, 0.0) };
        let control = MeanControl { output_dt: Some(0.1), ..Default::default() };
        let traj = integrate_mean(&init, &p, 50.0, &control).unwrap();
        for w in traj.states.windows(2) {
            for (a, b) in [((w[0].q1, w[0].p1), (w[1].q1, w[1].p1)), ((w[0].q2, w[0].p2), (w[1].q2, w[1].p2))] {
                let e0 = 0.5 * (a.0 * a.0 + a.1 * a.1);
                let e1 = 0.5 * (b.0 * b.0 + b.1 * b.1);
                assert!(e1 <= e0 + 1e-9, "{e0} -> {e1}");
            }
        }
    }

    #[test]
    fn divergence_is_reported() {
        let p = SystemParams::reference();
        let control = MeanControl { divergence_bound: 10.0, ..Default::default() };
        let err = integrate_mean(&MeanState::zero(), &p, 50.0, &control).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }));
    }

    fn synthetic(q1: impl Fn(f64) -> f64, q2: impl Fn(f64) -> f64) -> MeanTrajectory {
        let times = ode::uniform_grid(0.0, 60.0, 2.0 * PI / 128.0);
        let states = times
            .iter()
            .map(|&t| MeanState {
                q1: q1(t),
                p1: q1(t + PI / 2.0),
                q2: q2(t),
                p2: q2(t + PI / 2.0),
                a: Complex64::new(1.0, 0.0),
            })
            .collect();
        MeanTrajectory {
            times,
            states,
            horizon: 60.0,
            step: StepControl::default(),
            stats: IntegrationStats::default(),
            modulation_period: Some(2.0 * PI),
        }
    }

    #[test]
    fn identical_synthetic_inputs_have_zero_difference_mode() {
        let traj = synthetic(f64::sin, f64::sin);
        let r = limit_cycle_metrics(&traj, 20.0 * PI / 2.0).unwrap();
        assert_eq!(r.rms_q_minus, 0.0);
        assert_eq!(r.rms_p_minus, 0.0);
        assert!(r.rms_q_plus > 0.5);
        assert!(r.recurrence_error < 1e-12);
        assert_relative_eq!(r.dominant_period.unwrap(), 2.0 * PI, max_relative = 1e-2);
    }

    #[test]
    fn short_window_is_rejected() {
        let traj = synthetic(f64::sin, f64::sin);
        assert!(matches!(limit_cycle_metrics(&traj, 2.0 * PI), Err(Error::WindowTooShort(_))));
    }

    #[test]
    fn identical_oscillators_stay_identical() {
        let p = SystemParams { omega_m2: 1.0, ..SystemParams::reference() };
        let control = MeanControl::default();
        let traj = integrate_mean(&MeanState::zero(), &p, 100.0, &control).unwrap();
        let r = limit_cycle_metrics(&traj, 10.0 * 2.0 * PI).unwrap();
        assert_eq!(r.rms_q_minus, 0.0);
        assert_eq!(r.rms_p_minus, 0.0);
    }

    #[test]
    fn csv_header_and_rows() {
        let traj = synthetic(f64::sin, f64::cos);
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t,Q1,P1,Q2,P2,ReA,ImA");
        assert_eq!(lines.count(), traj.len());
    }
}
