//! Dormand–Prince 5(4) integrator with continuous (dense) output.
//!
//! The state is a flat `f64` slice so the same stepper can carry the mean
//! amplitudes alone or the mean amplitudes together with a covariance matrix.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

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
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

// 5th minus embedded 4th order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

// dense output
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// Tolerances and limits for the adaptive stepper.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StepControl {
    pub rtol: f64,
    pub atol: f64,
    pub initial_step: Option<f64>,
    pub max_step: f64,
    pub min_step: f64,
    pub max_steps: usize,
}

impl Default for StepControl {
    fn default() -> Self {
        Self {
            rtol: 1e-8,
            atol: 1e-10,
            initial_step: None,
            max_step: f64::INFINITY,
            min_step: 1e-14,
            max_steps: 50_000_000,
        }
    }
}

impl StepControl {
    pub fn validate(&self) -> Result<()> {
        if !(self.rtol > 0.0) || !(self.atol > 0.0) {
            return Err(Error::InvalidParameter("rtol and atol must be > 0".into()));
        }
        if !(self.max_step > 0.0) {
            return Err(Error::InvalidParameter("max_step must be > 0".into()));
        }
        Ok(())
    }

    /// Same control with both tolerances scaled by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self { rtol: self.rtol * factor, atol: self.atol * factor, ..*self }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct IntegrationStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
    /// Sum over accepted steps of the max-norm local error estimate.
    pub error_estimate: f64,
}

/// Integrates `y' = rhs(t, y)` from `t0` to `t_end`.
///
/// `outputs` must be sorted and lie in `[t0, t_end]`; `on_output(i, t, y)` is
/// called once per output time using the continuous extension.
/// `after_step(t, y)` runs after every accepted step; it may modify the state
/// (returning `true` if it did) or abort the integration with an error.
/// Returns the final state.
#[allow(clippy::too_many_arguments)]
pub fn integrate<F, O, S>(
    mut rhs: F,
    t0: f64,
    y0: &[f64],
    t_end: f64,
    control: &StepControl,
    outputs: &[f64],
    mut on_output: O,
    mut after_step: S,
) -> Result<(Vec<f64>, IntegrationStats)>
where
    F: FnMut(f64, &[f64], &mut [f64]),
    O: FnMut(usize, f64, &[f64]) -> Result<()>,
    S: FnMut(f64, &mut [f64]) -> Result<bool>,
{
    control.validate()?;
    if !(t_end >= t0) {
        return Err(Error::InvalidParameter("integration end precedes start".into()));
    }
    let n = y0.len();
    let mut stats = IntegrationStats::default();
    let mut y = y0.to_vec();
    let mut t = t0;
    let mut next_out = 0usize;

    while next_out < outputs.len() && outputs[next_out] <= t0 {
        on_output(next_out, outputs[next_out], &y)?;
        next_out += 1;
    }
    if t_end == t0 {
        return Ok((y, stats));
    }

    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut k5 = vec![0.0; n];
    let mut k6 = vec![0.0; n];
    let mut k7 = vec![0.0; n];
    let mut stage = vec![0.0; n];
    let mut y_new = vec![0.0; n];
    let mut dense = vec![[0.0; 5]; n];
    let mut scratch = vec![0.0; n];

    rhs(t, &y, &mut k1);
    stats.evaluations += 1;

    let span = t_end - t0;
    let mut h = match control.initial_step {
        Some(h) => h,
        None => initial_step(&mut rhs, t, &y, &k1, control, &mut stage, &mut scratch),
    }
    .min(control.max_step)
    .min(span);
    stats.evaluations += usize::from(control.initial_step.is_none());

    loop {
        if stats.accepted + stats.rejected >= control.max_steps {
            return Err(Error::MaxSteps(control.max_steps));
        }
        let last = t + h >= t_end || (t_end - (t + h)) < 1e-12 * span;
        if last {
            h = t_end - t;
        }
        if h < control.min_step * t.abs().max(1.0) {
            return Err(Error::StepSizeUnderflow { t, h });
        }

        for i in 0..n {
            stage[i] = y[i] + h * A21 * k1[i];
        }
        rhs(t + C2 * h, &stage, &mut k2);
        for i in 0..n {
            stage[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
        }
        rhs(t + C3 * h, &stage, &mut k3);
        for i in 0..n {
            stage[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        rhs(t + C4 * h, &stage, &mut k4);
        for i in 0..n {
            stage[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        rhs(t + C5 * h, &stage, &mut k5);
        for i in 0..n {
            stage[i] = y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        let t_new = if last { t_end } else { t + h };
        rhs(t_new, &stage, &mut k6);
        for i in 0..n {
            y_new[i] = y[i] + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
        }
        rhs(t_new, &y_new, &mut k7);
        stats.evaluations += 6;

        let mut err_sq = 0.0;
        let mut err_max = 0.0_f64;
        let mut finite = true;
        for i in 0..n {
            let e = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let sc = control.atol + control.rtol * y[i].abs().max(y_new[i].abs());
            err_sq += (e / sc) * (e / sc);
            err_max = err_max.max(e.abs());
            finite &= y_new[i].is_finite();
        }
        let err = if finite { (err_sq / n as f64).sqrt() } else { f64::INFINITY };

        if err <= 1.0 {
            stats.accepted += 1;
            stats.error_estimate += err_max;

            for i in 0..n {
                let ydiff = y_new[i] - y[i];
                let bspl = h * k1[i] - ydiff;
                dense[i] = [
                    y[i],
                    ydiff,
                    bspl,
                    ydiff - h * k7[i] - bspl,
                    h * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]),
                ];
            }
            while next_out < outputs.len() && outputs[next_out] <= t_new {
                let to = outputs[next_out];
                let theta = ((to - t) / h).clamp(0.0, 1.0);
                let theta1 = 1.0 - theta;
                for i in 0..n {
                    let r = &dense[i];
                    scratch[i] = r[0] + theta * (r[1] + theta1 * (r[2] + theta * (r[3] + theta1 * r[4])));
                }
                on_output(next_out, to, &scratch)?;
                next_out += 1;
            }

            t = t_new;
            std::mem::swap(&mut y, &mut y_new);
            if after_step(t, &mut y)? {
                rhs(t, &y, &mut k1);
                stats.evaluations += 1;
            } else {
                std::mem::swap(&mut k1, &mut k7);
            }
            if last {
                break;
            }
            let fac = (0.9 * err.max(1e-10).powf(-0.2)).clamp(0.2, 5.0);
            h = (h * fac).min(control.max_step);
        } else {
            stats.rejected += 1;
            let fac = if err.is_finite() { (0.9 * err.powf(-0.2)).clamp(0.1, 0.9) } else { 0.1 };
            h *= fac;
        }
    }

    while next_out < outputs.len() {
        on_output(next_out, outputs[next_out], &y)?;
        next_out += 1;
    }
    Ok((y, stats))
}

fn initial_step<F>(
    rhs: &mut F,
    t: f64,
    y: &[f64],
    f0: &[f64],
    control: &StepControl,
    y1: &mut [f64],
    f1: &mut [f64],
) -> f64
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let n = y.len() as f64;
    let mut d0 = 0.0;
    let mut d1 = 0.0;
    for i in 0..y.len() {
        let sc = control.atol + control.rtol * y[i].abs();
        d0 += (y[i] / sc).powi(2);
        d1 += (f0[i] / sc).powi(2);
    }
    let (d0, d1) = ((d0 / n).sqrt(), (d1 / n).sqrt());
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    for i in 0..y.len() {
        y1[i] = y[i] + h0 * f0[i];
    }
    rhs(t + h0, y1, f1);
    let mut d2 = 0.0;
    for i in 0..y.len() {
        let sc = control.atol + control.rtol * y[i].abs();
        d2 += ((f1[i] - f0[i]) / sc).powi(2);
    }
    let d2 = (d2 / n).sqrt() / h0;
    let h1 = if d1.max(d2) <= 1e-15 { (h0 * 1e-3).max(1e-6) } else { (0.01 / d1.max(d2)).powf(0.2) };
    (100.0 * h0).min(h1)
}

/// Output grid with spacing `dt` anchored at `t_end` (so trailing windows are
/// exactly uniform), starting at `t0`. The first gap may be shorter than `dt`.
pub fn uniform_grid(t0: f64, t_end: f64, dt: f64) -> Vec<f64> {
    let n = ((t_end - t0) / dt * (1.0 + 1e-12)).floor() as usize;
    let mut grid: Vec<f64> = (0..=n).rev().map(|k| t_end - k as f64 * dt).collect();
    if (grid[0] - t0).abs() <= 1e-9 * dt {
        grid[0] = t0;
    } else {
        grid.insert(0, t0);
    }
    grid
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn no_step(_: f64, _: &mut [f64]) -> Result<bool> {
        Ok(false)
    }

    #[test]
    fn exponential_decay_matches_closed_form() {
        let grid = uniform_grid(0.0, 5.0, 0.25);
        let mut out = Vec::new();
        let (y, stats) = integrate(
            |_, y, dy| dy[0] = -1.3 * y[0],
            0.0,
            &[2.0],
            5.0,
            &StepControl { rtol: 1e-10, atol: 1e-12, ..Default::default() },
            &grid,
            |_, t, y| {
                out.push((t, y[0]));
                Ok(())
            },
            no_step,
        )
        .unwrap();
        assert_eq!(out.len(), grid.len());
        for (t, v) in out {
            assert_relative_eq!(v, 2.0 * (-1.3 * t).exp(), max_relative = 1e-8);
        }
        assert_relative_eq!(y[0], 2.0 * (-6.5_f64).exp(), max_relative = 1e-9);
        assert!(stats.accepted > 0);
    }

    #[test]
    fn dense_output_is_accurate_between_steps() {
        // harmonic oscillator, coarse tolerances force long steps
        let grid = uniform_grid(0.0, 20.0, 0.01);
        let mut worst = 0.0_f64;
        integrate(
            |_, y, dy| {
                dy[0] = y[1];
                dy[1] = -y[0];
            },
            0.0,
            &[1.0, 0.0],
            20.0,
            &StepControl { rtol: 1e-9, atol: 1e-11, ..Default::default() },
            &grid,
            |_, t, y| {
                worst = worst.max((y[0] - t.cos()).abs());
                Ok(())
            },
            no_step,
        )
        .unwrap();
        assert!(worst < 1e-7, "worst dense error {worst}");
    }

    #[test]
    fn after_step_can_abort() {
        let err = integrate(
            |_, y, dy| dy[0] = y[0],
            0.0,
            &[1.0],
            100.0,
            &StepControl::default(),
            &[],
            |_, _, _| Ok(()),
            |t, y| {
                if y[0] > 1e6 {
                    Err(Error::Divergence { t, norm: y[0], bound: 1e6 })
                } else {
                    Ok(false)
                }
            },
        )
        .unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }));
    }

    #[test]
    fn uniform_grid_hits_end() {
        let g = uniform_grid(0.0, 1.0, 0.1);
        assert_eq!(g.len(), 11);
        assert_eq!(*g.last().unwrap(), 1.0);
        let g = uniform_grid(0.0, 1.05, 0.1);
        assert_eq!(g[0], 0.0);
        assert_eq!(*g.last().unwrap(), 1.05);
        assert!((g[1] - 0.05).abs() < 1e-12);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
    }
}
