//! First-harmonic steady state under resonant modulation (`Ω_D = ω_m`), the
//! effective fluctuation constants and the Routh–Hurwitz stability verdict.
//!
//! Every periodic quantity is expanded as `X(t) = X₋₁e^{iΩt} + X₀ + X₁e^{−iΩt}`.

use std::f64::consts::SQRT_2;

use nalgebra::{Matrix4, Schur};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::complex_parts;
use crate::params::SystemParams;

pub const RESONANCE_TOL: f64 = 1e-9;
pub const CONJUGACY_TOL: f64 = 1e-8;
/// Above this the plus-mode solve is flagged as ill-conditioned.
pub const CONDITION_WARN: f64 = 1e8;
const CONDITION_SINGULAR: f64 = 1e15;

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Coefficients of `e^{0}`, `e^{−iΩt}` and `e^{+iΩt}`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Harmonics {
    #[serde(with = "complex_parts")]
    pub c0: Complex64,
    #[serde(with = "complex_parts")]
    pub c1: Complex64,
    #[serde(with = "complex_parts")]
    pub cm1: Complex64,
}

impl Harmonics {
    pub fn new(c0: Complex64, c1: Complex64, cm1: Complex64) -> Self {
        Self { c0, c1, cm1 }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn as_array(&self) -> [Complex64; 3] {
        [self.c0, self.c1, self.cm1]
    }

    pub fn eval(&self, omega: f64, t: f64) -> Complex64 {
        let e = Complex64::from_polar(1.0, -omega * t);
        self.c0 + self.c1 * e + self.cm1 * e.conj()
    }

    /// `|A₀|² + |A₁|² + |A₋₁|²`.
    pub fn power(&self) -> f64 {
        self.c0.norm_sqr() + self.c1.norm_sqr() + self.cm1.norm_sqr()
    }

    /// `max(|Im X₀|, |X₋₁ − X₁*|)`: zero for a real signal.
    pub fn conjugacy_defect(&self) -> f64 {
        self.c0.im.abs().max((self.cm1 - self.c1.conj()).norm())
    }

    fn max_norm(&self) -> f64 {
        self.as_array().iter().fold(0.0_f64, |m, z| m.max(z.norm()))
    }
}

/// Analytic path preconditions: identical oscillators and resonant drive.
pub fn check_preconditions(params: &SystemParams) -> Result<()> {
    params.validate()?;
    if params.omega_m1 != params.omega_m2 {
        return Err(Error::AnalyticPrecondition(format!(
            "requires omega_m1 = omega_m2 (got {} and {})",
            params.omega_m1, params.omega_m2
        )));
    }
    if params.gamma_m1 != params.gamma_m2 {
        return Err(Error::AnalyticPrecondition(format!(
            "requires gamma_m1 = gamma_m2 (got {} and {})",
            params.gamma_m1, params.gamma_m2
        )));
    }
    if !params.couplings.is_symmetric() {
        return Err(Error::AnalyticPrecondition("requires g1_1 = g1_2 and g2_1 = g2_2".into()));
    }
    if (params.omega_d - params.omega_m1).abs() >= RESONANCE_TOL {
        return Err(Error::AnalyticPrecondition(format!(
            "requires omega_d = omega_m within {RESONANCE_TOL:e} (got omega_d = {}, omega_m = {})",
            params.omega_d, params.omega_m1
        )));
    }
    Ok(())
}

/// Cavity coefficients with the `U`-corrections dropped.
pub fn cavity_fourier_coefficients(params: &SystemParams) -> Result<Harmonics> {
    check_preconditions(params)?;
    let d = params.drive_components();
    let (k, delta, w) = (params.kappa, params.detuning, params.omega_m1);
    Ok(Harmonics::new(
        d.e0 / Complex64::new(k, delta),
        d.e_plus / Complex64::new(k, delta - w),
        d.e_minus / Complex64::new(k, delta + w),
    ))
}

/// Frequency shifts `(X, X₀, X₁)` built from cavity bilinears with prefactor `c`.
fn shifts(a: &Harmonics, c: f64) -> (f64, Complex64, Complex64) {
    (c * a.power(), c * (a.c0 * a.c1.conj() + a.c0.conj() * a.cm1), c * (a.c1.conj() * a.cm1))
}

/// `(W, W₀, W₁)` with prefactor `2g₂ + g₃`.
pub fn minus_mode_shifts(a: &Harmonics, params: &SystemParams) -> (f64, Complex64, Complex64) {
    let c = &params.couplings;
    shifts(a, 2.0 * c.g2_1 + c.g3)
}

/// `(V, V₀, V₁)` with prefactor `2g₂ − g₃`.
pub fn plus_mode_shifts(a: &Harmonics, params: &SystemParams) -> (f64, Complex64, Complex64) {
    let c = &params.couplings;
    shifts(a, 2.0 * c.g2_1 - c.g3)
}

/// Shared 3×3 structure of both sum and difference mode systems; unknowns are
/// ordered `(X₀, X₁, X₋₁)`.
fn mode_matrix(omega: f64, gamma: f64, s: f64, s0: Complex64, s1: Complex64) -> [[Complex64; 3]; 3] {
    let re = |x: f64| Complex64::new(x, 0.0);
    [
        [re(omega + s), s0, s0.conj()],
        [s0, s1, Complex64::new(s, gamma)],
        [s0.conj(), Complex64::new(s, -gamma), s1.conj()],
    ]
}

fn mat_vec(m: &[[Complex64; 3]; 3], x: &[Complex64; 3]) -> [Complex64; 3] {
    std::array::from_fn(|i| m[i][0] * x[0] + m[i][1] * x[1] + m[i][2] * x[2])
}

/// Largest absolute left-hand side of the difference-mode system at `q`.
pub fn minus_mode_residual(q: &Harmonics, a: &Harmonics, params: &SystemParams) -> f64 {
    let (w, w0, w1) = minus_mode_shifts(a, params);
    let m = mode_matrix(params.omega_m1, params.gamma_m1, w, w0, w1);
    mat_vec(&m, &q.as_array()).iter().fold(0.0_f64, |acc, z| acc.max(z.norm()))
}

/// Residual of the difference-mode system at the trivial solution `Q⁻ = 0`.
pub fn verify_minus_mode_null(a: &Harmonics, params: &SystemParams) -> f64 {
    minus_mode_residual(&Harmonics::zero(), a, params)
}

/// Gaussian elimination with partial pivoting; returns `None` on a zero pivot.
#[allow(clippy::needless_range_loop)]
fn lu_solve(m: &[[Complex64; 3]; 3], rhs: &[[Complex64; 3]]) -> Option<Vec<[Complex64; 3]>> {
    let mut a = *m;
    let mut b: Vec<[Complex64; 3]> = rhs.to_vec();
    for col in 0..3 {
        let piv = (col..3).max_by(|&i, &j| a[i][col].norm().total_cmp(&a[j][col].norm()))?;
        if a[piv][col].norm() == 0.0 {
            return None;
        }
        a.swap(col, piv);
        for v in b.iter_mut() {
            v.swap(col, piv);
        }
        for row in (col + 1)..3 {
            let f = a[row][col] / a[col][col];
            for k in col..3 {
                let t = a[col][k];
                a[row][k] -= f * t;
            }
            for v in b.iter_mut() {
                let t = v[col];
                v[row] -= f * t;
            }
        }
    }
    for v in b.iter_mut() {
        for row in (0..3).rev() {
            let mut s = v[row];
            for k in (row + 1)..3 {
                s -= a[row][k] * v[k];
            }
            v[row] = s / a[row][row];
        }
    }
    Some(b)
}

fn inf_norm(m: &[[Complex64; 3]; 3]) -> f64 {
    m.iter().map(|r| r.iter().map(|z| z.norm()).sum::<f64>()).fold(0.0, f64::max)
}

/// Infinity-norm condition number `‖M‖‖M⁻¹‖`.
fn condition_number(m: &[[Complex64; 3]; 3]) -> f64 {
    let unit =
        |i: usize| std::array::from_fn(|k| if k == i { Complex64::new(1.0, 0.0) } else { Complex64::new(0.0, 0.0) });
    match lu_solve(m, &[unit(0), unit(1), unit(2)]) {
        Some(cols) => {
            let inv: [[Complex64; 3]; 3] = std::array::from_fn(|i| std::array::from_fn(|j| cols[j][i]));
            inf_norm(m) * inf_norm(&inv)
        }
        None => f64::INFINITY,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlusModeSolution {
    pub q: Harmonics,
    pub p: Harmonics,
    pub condition: f64,
    pub ill_conditioned: bool,
    /// Conjugacy defect of the raw solve, before symmetrization.
    pub conjugacy_defect: f64,
    /// `max|M q − b| / max(|b|, ‖M‖|q|)` for the delivered `q`.
    pub relative_residual: f64,
}

/// The sum-mode linear system `M q = b`.
pub fn plus_mode_system(a: &Harmonics, params: &SystemParams) -> ([[Complex64; 3]; 3], [Complex64; 3]) {
    let (v, v0, v1) = plus_mode_shifts(a, params);
    let m = mode_matrix(params.omega_m1, params.gamma_m1, v, v0, v1);
    let g = SQRT_2 * params.couplings.g1_1;
    let b = [
        Complex64::new(g * a.power(), 0.0),
        g * (a.c0 * a.c1.conj() + a.c0.conj() * a.cm1),
        g * (a.c0 * a.cm1.conj() + a.c0.conj() * a.c1),
    ];
    (m, b)
}

pub fn plus_mode_coefficients(a: &Harmonics, params: &SystemParams) -> Result<PlusModeSolution> {
    let (m, b) = plus_mode_system(a, params);
    let condition = condition_number(&m);
    if !(condition < CONDITION_SINGULAR) {
        return Err(Error::SingularSystem { condition });
    }
    let x = lu_solve(&m, &[b]).ok_or(Error::SingularSystem { condition })?[0];
    let raw = Harmonics::new(x[0], x[1], x[2]);
    let conjugacy_defect = raw.conjugacy_defect();
    let scale = raw.max_norm().max(1.0);
    if conjugacy_defect > CONJUGACY_TOL * scale {
        return Err(Error::Conjugacy(format!("sum-mode solve has |Q₋₁ − Q₁*| or |Im Q₀| = {conjugacy_defect:e}")));
    }
    let c1 = 0.5 * (raw.c1 + raw.cm1.conj());
    let q = Harmonics::new(Complex64::new(raw.c0.re, 0.0), c1, c1.conj());

    let mq = mat_vec(&m, &q.as_array());
    let num = mq.iter().zip(&b).fold(0.0_f64, |acc, (l, r)| acc.max((l - r).norm()));
    let den = b.iter().fold(inf_norm(&m) * q.max_norm(), |acc, z| acc.max(z.norm()));
    let relative_residual = if den > 0.0 { num / den } else { num };

    let ratio = params.omega_d / params.omega_m1;
    let p = Harmonics::new(Complex64::new(0.0, 0.0), -I * ratio * q.c1, I * ratio * q.cm1);
    Ok(PlusModeSolution {
        q,
        p,
        condition,
        ill_conditioned: condition > CONDITION_WARN,
        conjugacy_defect,
        relative_residual,
    })
}

/// `F₀, F₁, F₂, Δ′` of the linearized sum-mode dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectiveConstants {
    pub f0: f64,
    #[serde(with = "complex_parts")]
    pub f1: Complex64,
    #[serde(with = "complex_parts")]
    pub f2: Complex64,
    pub detuning: f64,
}

impl EffectiveConstants {
    /// Bare system: `F₀ = ω_m`, `F₁ = F₂ = 0`, `Δ′ = Δ`.
    pub fn bare(params: &SystemParams) -> Self {
        Self {
            f0: params.omega_m1,
            f1: Complex64::new(0.0, 0.0),
            f2: Complex64::new(0.0, 0.0),
            detuning: params.detuning,
        }
    }

    pub fn f1f2(&self) -> Complex64 {
        self.f1 * self.f2
    }
}

pub fn effective_constants(a: &Harmonics, q: &Harmonics, params: &SystemParams) -> EffectiveConstants {
    let c = &params.couplings;
    let g1 = SQRT_2 * c.g1_1;
    let v = 2.0 * c.g2_1 - c.g3;
    let f0 = params.omega_m1 + v * a.power();
    let f1 = g1 * a.c0 - v * (q.c0 * a.c0 + q.c1 * a.cm1 + q.cm1 * a.c1);
    let f2 = g1 * a.c0.conj() - v * (q.c0 * a.c0.conj() + q.c1 * a.c1.conj() + q.cm1 * a.cm1.conj());
    let dp = params.detuning - g1 * q.c0 + 0.5 * v * (q.c0 * q.c0 + 2.0 * q.c1 * q.cm1);
    EffectiveConstants { f0, f1, f2, detuning: dp.re }
}

/// The 4×4 drift of `(δq₊, δp₊, δx, δy)`.
pub fn fluctuation_matrix(k: &EffectiveConstants, params: &SystemParams) -> Matrix4<Complex64> {
    let re = |x: f64| Complex64::new(x, 0.0);
    let s = (k.f1 + k.f2) / SQRT_2;
    let d = I * (k.f2 - k.f1) / SQRT_2;
    let (w, g, kap, dp) = (params.omega_m1, params.gamma_m1, params.kappa, k.detuning);
    #[rustfmt::skip]
    let f = Matrix4::new(
        re(0.0), re(w), re(0.0), re(0.0),
        re(-k.f0), re(-g), s, d,
        -d, re(0.0), re(-kap), re(dp),
        s, re(0.0), re(-dp), re(-kap),
    );
    f
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub condition1: f64,
    pub condition2: f64,
    pub stable: bool,
    pub eigenvalue_max_real_part: f64,
    /// `|Im F₁F₂|`; zero whenever `F₂ = F₁*`.
    pub f1f2_imag: f64,
}

impl StabilityReport {
    pub fn eigen_stable(&self) -> bool {
        self.eigenvalue_max_real_part < 0.0
    }
}

/// Routh–Hurwitz conditions with an eigenvalue cross-check.
pub fn stability_check(k: &EffectiveConstants, params: &SystemParams) -> Result<StabilityReport> {
    let vals = [k.f0, k.f1.re, k.f1.im, k.f2.re, k.f2.im, k.detuning];
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("effective constants must be finite".into()));
    }
    let (w, g, kap, dp, f0) = (params.omega_m1, params.gamma_m1, params.kappa, k.detuning, k.f0);
    let ff = k.f1f2();
    let f1f2 = ff.re;
    let d2 = dp * dp;
    let k2 = kap * kap;
    let condition1 = kap
        * g
        * ((d2 + k2).powi(2)
            + (f0 * w + g * kap).powi(2)
            + 2.0 * g * kap * (k2 + d2)
            + 2.0 * f0 * w * (k2 - d2)
            + g * g * d2)
        + f1f2 * dp * w * (g + 2.0 * kap).powi(2);
    let condition2 = f0 * w * (k2 + d2) - 2.0 * f1f2 * w * dp;

    let eig = Schur::new(fluctuation_matrix(k, params))
        .eigenvalues()
        .ok_or_else(|| Error::Unstable("eigenvalue decomposition failed".into()))?;
    let eigenvalue_max_real_part = eig.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
    Ok(StabilityReport {
        condition1,
        condition2,
        stable: condition1 > 0.0 && condition2 > 0.0,
        eigenvalue_max_real_part,
        f1f2_imag: ff.im.abs(),
    })
}

/// How far the solution sits from the regime the truncation assumes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeakCouplingDiagnostics {
    pub ratio: f64,
    /// `max|g| ≤ ratio·min(ω_m, κ)`.
    pub bare_couplings_weak: bool,
    pub max_coupling: f64,
    /// `|Δ′ − Δ| / κ`.
    pub cavity_shift_over_kappa: f64,
    /// `W / ω_m`.
    pub minus_shift_over_omega: f64,
    /// `V / ω_m`.
    pub plus_shift_over_omega: f64,
    /// `|A₋₁| / |A₀|`.
    pub sideband_ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FloquetSolution {
    pub cavity: Harmonics,
    pub q_plus: Harmonics,
    pub p_plus: Harmonics,
    pub q_minus: Harmonics,
    pub p_minus: Harmonics,
    pub constants: EffectiveConstants,
    pub minus_null_residual: f64,
    pub plus_condition: f64,
    pub plus_ill_conditioned: bool,
    pub plus_conjugacy_defect: f64,
    pub plus_relative_residual: f64,
}

impl FloquetSolution {
    pub fn solve(params: &SystemParams) -> Result<Self> {
        let cavity = cavity_fourier_coefficients(params)?;
        let plus = plus_mode_coefficients(&cavity, params)?;
        Ok(Self {
            cavity,
            q_plus: plus.q,
            p_plus: plus.p,
            q_minus: Harmonics::zero(),
            p_minus: Harmonics::zero(),
            constants: effective_constants(&cavity, &plus.q, params),
            minus_null_residual: verify_minus_mode_null(&cavity, params),
            plus_condition: plus.condition,
            plus_ill_conditioned: plus.ill_conditioned,
            plus_conjugacy_defect: plus.conjugacy_defect,
            plus_relative_residual: plus.relative_residual,
        })
    }

    pub fn diagnostics(&self, params: &SystemParams, ratio: f64) -> WeakCouplingDiagnostics {
        let (w, _, _) = minus_mode_shifts(&self.cavity, params);
        let (v, _, _) = plus_mode_shifts(&self.cavity, params);
        WeakCouplingDiagnostics {
            ratio,
            bare_couplings_weak: params.weak_coupling(ratio),
            max_coupling: params.couplings.max_abs(),
            cavity_shift_over_kappa: (self.constants.detuning - params.detuning).abs() / params.kappa,
            minus_shift_over_omega: w / params.omega_m1,
            plus_shift_over_omega: v / params.omega_m1,
            sideband_ratio: self.cavity.cm1.norm() / self.cavity.c0.norm(),
        }
    }
}

/// Everything the `floquet` and `stability` subcommands emit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FloquetReport {
    pub solution: FloquetSolution,
    pub stability: StabilityReport,
    pub weak_coupling: WeakCouplingDiagnostics,
}

impl FloquetReport {
    pub fn compute(params: &SystemParams, weak_ratio: f64) -> Result<Self> {
        let solution = FloquetSolution::solve(params)?;
        let stability = stability_check(&solution.constants, params)?;
        Ok(Self { solution, stability, weak_coupling: solution.diagnostics(params, weak_ratio) })
    }
}
