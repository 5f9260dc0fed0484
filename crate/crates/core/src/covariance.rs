//! Gaussian fluctuation dynamics around the mean trajectory.
//!
//! The covariance matrix is taken over `(δq₁, δp₁, δq₂, δp₂, δx, δy)` and obeys
//! the Lyapunov equation `dC/dt = B(t) C + C B(t)ᵀ + ζ`. It is co-integrated
//! with the mean-value equations in a single 42-component state so that `B(t)`
//! is always evaluated on the exact stage values of the mean.

use std::f64::consts::SQRT_2;
use std::io::Write;

use nalgebra::Matrix6;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::fmt_f64;
use crate::meanfield::{self, check_divergence, MeanControl, MeanState, MeanTrajectory};
use crate::ode::{self, IntegrationStats, StepControl};
use crate::params::SystemParams;

pub type Mat6 = Matrix6<f64>;

const SYMMETRY_TOL: f64 = 1e-9;

/// Symmetrized second moments `C_ij = ⟨M_i M_j + M_j M_i⟩/2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovarianceState(Mat6);

impl CovarianceState {
    pub fn new(m: Mat6) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::Unphysical("covariance has non-finite entries".into()));
        }
        let asym = asymmetry(&m);
        if asym > SYMMETRY_TOL {
            return Err(Error::Unphysical(format!("covariance not symmetric (max |C - Cᵀ| = {asym:e})")));
        }
        if let Some(i) = (0..6).find(|&i| m[(i, i)] <= 0.0) {
            return Err(Error::Unphysical(format!("diagonal entry C[{i}][{i}] = {} is not positive", m[(i, i)])));
        }
        Ok(Self(symmetrize(&m)))
    }

    /// Minimum-uncertainty vacuum, `C = I/2`.
    pub fn vacuum() -> Self {
        Self(Mat6::identity() * 0.5)
    }

    /// Thermal mechanical modes with `(2n̄+1)/2` variances; cavity in vacuum.
    pub fn thermal(nbar: f64) -> Self {
        let v = nbar + 0.5;
        Self(Mat6::from_diagonal(&nalgebra::Vector6::new(v, v, v, v, 0.5, 0.5)))
    }

    pub fn matrix(&self) -> &Mat6 {
        &self.0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn variances(&self) -> EprVariances {
        EprVariances::from_matrix(&self.0)
    }

    pub(crate) fn from_raw(m: Mat6) -> Self {
        Self(symmetrize(&m))
    }
}

fn asymmetry(m: &Mat6) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..6 {
        for j in (i + 1)..6 {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

fn symmetrize(m: &Mat6) -> Mat6 {
    (m + m.transpose()) * 0.5
}

/// Variances of the joint quadratures `q± = (q₁ ± q₂)/√2`, `p± = (p₁ ± p₂)/√2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EprVariances {
    pub q_minus: f64,
    pub p_minus: f64,
    pub q_plus: f64,
    pub p_plus: f64,
}

impl EprVariances {
    pub fn from_matrix(c: &Mat6) -> Self {
        Self {
            q_minus: 0.5 * (c[(0, 0)] + c[(2, 2)] - c[(0, 2)] - c[(2, 0)]),
            p_minus: 0.5 * (c[(1, 1)] + c[(3, 3)] - c[(1, 3)] - c[(3, 1)]),
            q_plus: 0.5 * (c[(0, 0)] + c[(2, 2)] + c[(0, 2)] + c[(2, 0)]),
            p_plus: 0.5 * (c[(1, 1)] + c[(3, 3)] + c[(1, 3)] + c[(3, 1)]),
        }
    }
}

/// Synchronization measure `S_q = 1/(⟨δq₋²⟩ + ⟨δp₋²⟩)`.
pub fn sync_measure(c: &CovarianceState) -> Result<f64> {
    let v = c.variances();
    let bracket = v.q_minus + v.p_minus;
    if !(bracket > 0.0) {
        return Err(Error::Unphysical(format!("⟨δq₋²⟩ + ⟨δp₋²⟩ = {bracket} is not positive")));
    }
    Ok(1.0 / bracket)
}

/// Product entanglement marker `E_D = ⟨δq₋²⟩⟨δp₊²⟩`; entangled iff `< 1/4`.
pub fn entanglement_marker(c: &CovarianceState) -> f64 {
    let v = c.variances();
    v.q_minus * v.p_plus
}

/// Duan sum `⟨δq₋²⟩ + ⟨δp₊²⟩`; entangled iff `< 1`.
pub fn duan_sum(c: &CovarianceState) -> f64 {
    let v = c.variances();
    v.q_minus + v.p_plus
}

/// Synchronization measure including the mean mismatch `Q₋, P₋`.
pub fn mari_measure(mean: &MeanState, c: &CovarianceState) -> Result<f64> {
    let v = c.variances();
    let total = mean.q_minus().powi(2) + mean.p_minus().powi(2) + v.q_minus + v.p_minus;
    if !(total > 0.0) {
        return Err(Error::Unphysical(format!("mean-square mismatch {total} is not positive")));
    }
    Ok(1.0 / total)
}

/// Linearized drift matrix `B` for the mean state.
pub fn drift_matrix(mean: &MeanState, params: &SystemParams) -> Mat6 {
    let c = &params.couplings;
    let (q1, q2, a) = (mean.q1, mean.q2, mean.a);
    let n = a.norm_sqr();
    let g1 = c.g1_1 - 2.0 * c.g2_1 * q1 + c.g3 * q2;
    let g2 = c.g1_2 - 2.0 * c.g2_2 * q2 + c.g3 * q1;
    let f = params.detuning - c.g1_1 * q1 - c.g1_2 * q2 + c.g2_1 * q1 * q1 + c.g2_2 * q2 * q2 - c.g3 * q1 * q2;
    let (re, im) = (SQRT_2 * a.re, SQRT_2 * a.im);
    #[rustfmt::skip]
    let b = Mat6::new(
        0.0,                                   params.omega_m1, 0.0,                                   0.0,             0.0,          0.0,
        -params.omega_m1 - 2.0 * c.g2_1 * n,  -params.gamma_m1, c.g3 * n,                              0.0,             g1 * re,      g1 * im,
        0.0,                                   0.0,             0.0,                                   params.omega_m2, 0.0,          0.0,
        c.g3 * n,                              0.0,             -params.omega_m2 - 2.0 * c.g2_2 * n,  -params.gamma_m2, g2 * re,      g2 * im,
        -g1 * im,                              0.0,             -g2 * im,                              0.0,             -params.kappa, f,
        g1 * re,                               0.0,             g2 * re,                               0.0,             -f,           -params.kappa,
    );
    b
}

/// `diag[0, (2n̄+1)γ₁, 0, (2n̄+1)γ₂, κ, κ]`.
pub fn diffusion_matrix(params: &SystemParams) -> Mat6 {
    let th = 2.0 * params.nbar + 1.0;
    Mat6::from_diagonal(&nalgebra::Vector6::new(
        0.0,
        th * params.gamma_m1,
        0.0,
        th * params.gamma_m2,
        params.kappa,
        params.kappa,
    ))
}

fn lyapunov_rhs(b: &Mat6, c: &Mat6, zeta: &Mat6) -> Mat6 {
    let bc = b * c;
    bc + bc.transpose() + zeta
}

/// Metrics evaluated on one covariance sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSample {
    pub t: f64,
    pub sq: f64,
    pub ed: f64,
    pub duan: f64,
    pub sqm: f64,
}

impl MetricSample {
    pub fn evaluate(t: f64, mean: &MeanState, c: &CovarianceState) -> Result<Self> {
        Ok(Self { t, sq: sync_measure(c)?, ed: entanglement_marker(c), duan: duan_sum(c), sqm: mari_measure(mean, c)? })
    }
}

/// Per-step bookkeeping over every accepted integration step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepAudit {
    pub steps: usize,
    /// Largest S_q seen at any accepted step.
    pub max_sq: f64,
    /// Largest `|C_ij − C_ji|` produced by a step before re-symmetrization.
    pub max_asymmetry: f64,
    pub min_diagonal: f64,
}

impl Default for StepAudit {
    fn default() -> Self {
        Self { steps: 0, max_sq: f64::NEG_INFINITY, max_asymmetry: 0.0, min_diagonal: f64::INFINITY }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationControl {
    pub mean: MeanControl,
    pub covariance_bound: f64,
}

impl Default for SimulationControl {
    fn default() -> Self {
        Self { mean: MeanControl::default(), covariance_bound: 1e12 }
    }
}

/// Mean trajectory with co-integrated covariance and sampled metrics.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub trajectory: MeanTrajectory,
    pub covariances: Vec<CovarianceState>,
    pub samples: Vec<MetricSample>,
    pub audit: StepAudit,
}

impl Simulation {
    /// Writes `t,Q1,P1,Q2,P2,ReA,ImA,Sq,ED,duan,Sqm`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,Q1,P1,Q2,P2,ReA,ImA,Sq,ED,duan,Sqm")?;
        for ((t, s), m) in self.trajectory.times.iter().zip(&self.trajectory.states).zip(&self.samples) {
            let cols = [*t, s.q1, s.p1, s.q2, s.p2, s.a.re, s.a.im, m.sq, m.ed, m.duan, m.sqm];
            let line: Vec<String> = cols.iter().map(|v| fmt_f64(*v)).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }

    pub fn times(&self) -> &[f64] {
        &self.trajectory.times
    }

    pub fn series(&self, f: impl Fn(&MetricSample) -> f64) -> Vec<f64> {
        self.samples.iter().map(f).collect()
    }

    pub fn variance_series(&self, f: impl Fn(&EprVariances) -> f64) -> Vec<f64> {
        self.covariances.iter().map(|c| f(&c.variances())).collect()
    }
}

const STATE_DIM: usize = MeanState::DIM + 36;

struct Combined<'a> {
    params: &'a SystemParams,
    zeta: Mat6,
}

impl Combined<'_> {
    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) {
        meanfield::drift_into(&y[..6], t, self.params, &mut dy[..6]);
        let mean = MeanState::from_slice(&y[..6]);
        let b = drift_matrix(&mean, self.params);
        let c = Mat6::from_column_slice(&y[6..]);
        dy[6..].copy_from_slice(lyapunov_rhs(&b, &c, &self.zeta).as_slice());
    }
}

fn pack(mean: &MeanState, c: &CovarianceState) -> Vec<f64> {
    let mut y = Vec::with_capacity(STATE_DIM);
    y.extend_from_slice(&mean.to_array());
    y.extend_from_slice(c.matrix().as_slice());
    y
}

/// Co-integrates means and covariance from t = 0 to `horizon`.
pub fn simulate(
    initial: &MeanState,
    c0: &CovarianceState,
    params: &SystemParams,
    horizon: f64,
    control: &SimulationControl,
) -> Result<Simulation> {
    params.validate()?;
    if !(horizon > 0.0) {
        return Err(Error::InvalidParameter("horizon must be > 0".into()));
    }
    let times = ode::uniform_grid(0.0, horizon, control.mean.output_spacing(params));
    let (trajectory, covariances, audit) = run_combined(initial, c0, params, &times, &control.mean.step, control)?;
    let samples = trajectory
        .states
        .iter()
        .zip(&covariances)
        .zip(&trajectory.times)
        .map(|((m, c), t)| MetricSample::evaluate(*t, m, c))
        .collect::<Result<Vec<_>>>()?;
    Ok(Simulation { trajectory, covariances, samples, audit })
}

fn run_combined(
    initial: &MeanState,
    c0: &CovarianceState,
    params: &SystemParams,
    times: &[f64],
    step: &StepControl,
    control: &SimulationControl,
) -> Result<(MeanTrajectory, Vec<CovarianceState>, StepAudit)> {
    let system = Combined { params, zeta: diffusion_matrix(params) };
    let t0 = times[0];
    let t_end = *times.last().unwrap();
    let mut states = vec![MeanState::zero(); times.len()];
    let mut covs = vec![CovarianceState::vacuum(); times.len()];
    let mut audit = StepAudit::default();
    let mean_bound = control.mean.divergence_bound;
    let cov_bound = control.covariance_bound;

    let (_, stats): (Vec<f64>, IntegrationStats) = ode::integrate(
        |t, y, dy| system.rhs(t, y, dy),
        t0,
        &pack(initial, c0),
        t_end,
        step,
        times,
        |i, _, y| {
            states[i] = MeanState::from_slice(&y[..6]);
            covs[i] = CovarianceState::from_raw(Mat6::from_column_slice(&y[6..]));
            Ok(())
        },
        |t, y| {
            check_divergence(t, &y[..6], mean_bound)?;
            check_divergence(t, &y[6..], cov_bound)?;
            let raw = Mat6::from_column_slice(&y[6..]);
            let asym = asymmetry(&raw);
            let c = symmetrize(&raw);
            audit.steps += 1;
            audit.max_asymmetry = audit.max_asymmetry.max(asym);
            audit.min_diagonal = (0..6).fold(audit.min_diagonal, |m, i| m.min(c[(i, i)]));
            let v = EprVariances::from_matrix(&c);
            audit.max_sq = audit.max_sq.max(1.0 / (v.q_minus + v.p_minus));
            if asym > 0.0 {
                y[6..].copy_from_slice(c.as_slice());
                Ok(true)
            } else {
                Ok(false)
            }
        },
    )?;

    let trajectory = MeanTrajectory {
        times: times.to_vec(),
        states,
        horizon: t_end,
        step: *step,
        stats,
        modulation_period: params.modulation_period(),
    };
    Ok((trajectory, covs, audit))
}

/// Propagates `c0` along a mean trajectory.
///
/// The mean equations are re-integrated together with the covariance from the
/// trajectory's first state, using the trajectory's step control and output
/// grid, so `B(t)` is never interpolated.
pub fn propagate_covariance(
    c0: &CovarianceState,
    traj: &MeanTrajectory,
    params: &SystemParams,
    control: &SimulationControl,
) -> Result<Vec<(f64, CovarianceState)>> {
    params.validate()?;
    let first = traj.states.first().ok_or_else(|| Error::InvalidParameter("empty trajectory".into()))?;
    let (_, covs, _) = run_combined(first, c0, params, &traj.times, &traj.step, control)?;
    Ok(traj.times.iter().copied().zip(covs).collect())
}

/// Lyapunov propagation with an externally supplied drift `B(t)`.
pub fn propagate_lyapunov(
    c0: &CovarianceState,
    drift: impl Fn(f64) -> Mat6,
    zeta: &Mat6,
    times: &[f64],
    step: &StepControl,
) -> Result<Vec<CovarianceState>> {
    if times.is_empty() {
        return Ok(Vec::new());
    }
    let mut out = vec![CovarianceState::vacuum(); times.len()];
    ode::integrate(
        |t, y, dy| {
            let c = Mat6::from_column_slice(y);
            dy.copy_from_slice(lyapunov_rhs(&drift(t), &c, zeta).as_slice());
        },
        times[0],
        c0.matrix().as_slice(),
        *times.last().unwrap(),
        step,
        times,
        |i, _, y| {
            out[i] = CovarianceState::from_raw(Mat6::from_column_slice(y));
            Ok(())
        },
        |_, y| {
            let raw = Mat6::from_column_slice(y);
            y.copy_from_slice(symmetrize(&raw).as_slice());
            Ok(false)
        },
    )?;
    Ok(out)
}
