//! Frequency-domain fluctuation spectra of the difference and sum modes and the
//! resulting stationary variances.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::Schur;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::floquet::{self, EffectiveConstants, FloquetSolution};
use crate::io::fmt_f64;
use crate::params::SystemParams;
use crate::quadrature::{self, QuadratureControl};

/// Relative size of `Im F₁F₂` tolerated before the product is rejected.
pub const F1F2_IMAG_TOL: f64 = 1e-10;
pub const SYMMETRY_TOL: f64 = 1e-8;

/// Everything the densities depend on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralContext {
    pub params: SystemParams,
    /// `|A₀|² + |A₁|² + |A₋₁|²`.
    pub power: f64,
    /// `W = (2g₂ + g₃)·power`.
    pub minus_shift: f64,
    /// `V = (2g₂ − g₃)·power`.
    pub plus_shift: f64,
    pub constants: EffectiveConstants,
    /// `Re F₁F₂`.
    pub f1f2: f64,
}

impl SpectralContext {
    pub fn new(params: &SystemParams, power: f64, constants: EffectiveConstants) -> Result<Self> {
        params.validate()?;
        let ff = constants.f1f2();
        if ff.im.abs() > F1F2_IMAG_TOL * ff.norm() {
            return Err(Error::Conjugacy(format!("Im F₁F₂ = {:e} against |F₁F₂| = {:e}", ff.im, ff.norm())));
        }
        let c = &params.couplings;
        Ok(Self {
            params: *params,
            power,
            minus_shift: (2.0 * c.g2_1 + c.g3) * power,
            plus_shift: (2.0 * c.g2_1 - c.g3) * power,
            constants,
            f1f2: ff.re,
        })
    }

    pub fn from_floquet(sol: &FloquetSolution, params: &SystemParams) -> Result<Self> {
        Self::new(params, sol.cavity.power(), sol.constants)
    }

    /// Floquet solve followed by context construction.
    pub fn analytic(params: &SystemParams) -> Result<Self> {
        Self::from_floquet(&FloquetSolution::solve(params)?, params)
    }

    /// No optomechanical coupling: bare thermal oscillators.
    pub fn decoupled(params: &SystemParams) -> Result<Self> {
        Self::new(params, 0.0, EffectiveConstants::bare(params))
    }

    fn thermal(&self) -> f64 {
        self.params.gamma_m1 * (2.0 * self.params.nbar + 1.0)
    }

    /// `d(ω) = ω² + iωγ − ω_m² − ω_m W`.
    pub fn d(&self, w: f64) -> Complex64 {
        let p = &self.params;
        Complex64::new(w * w - p.omega_m1 * p.omega_m1 - p.omega_m1 * self.minus_shift, w * p.gamma_m1)
    }

    /// `D(ω) = 2Δ′ω_m F₁F₂ + [ω² + iωγ − ω_m² − ω_m V][(κ − iω)² + Δ′²]`.
    pub fn big_d(&self, w: f64) -> Complex64 {
        let p = &self.params;
        let dp = self.constants.detuning;
        let mech = Complex64::new(w * w - p.omega_m1 * p.omega_m1 - p.omega_m1 * self.plus_shift, w * p.gamma_m1);
        let cav = Complex64::new(p.kappa, -w).powi(2) + dp * dp;
        2.0 * dp * p.omega_m1 * self.f1f2 + mech * cav
    }

    /// `μ(ω) = γ(2n̄+1)/|d(ω)|²`.
    pub fn mu(&self, w: f64) -> f64 {
        self.thermal() / self.d(w).norm_sqr()
    }

    /// `ν(ω)` as displayed; not even in `ω` when `F₁F₂ ≠ 0`.
    pub fn nu(&self, w: f64) -> f64 {
        let p = &self.params;
        let (k, dp) = (p.kappa, self.constants.detuning);
        let rp = 2.0 * k * self.f1f2 * (k * k + (dp + w).powi(2));
        let th = self.thermal() * ((dp * dp + k * k - w * w).powi(2) + 4.0 * k * k * w * w);
        (rp + th) / self.big_d(w).norm_sqr()
    }

    /// Resonances as `(centre, half-width)` on the positive axis, from the
    /// roots of `d` and the eigenvalues of the sum-mode drift.
    pub fn resonances(&self) -> Vec<(f64, f64)> {
        let p = &self.params;
        let mut out = Vec::new();
        let a2 = p.omega_m1 * (p.omega_m1 + self.minus_shift);
        let g = p.gamma_m1;
        out.push(((a2 - 0.25 * g * g).max(0.0).sqrt(), 0.5 * g));
        if let Some(eig) = Schur::new(floquet::fluctuation_matrix(&self.constants, p)).eigenvalues() {
            for z in eig.iter() {
                out.push((z.im.abs(), z.re.abs()));
            }
        }
        out.push((self.constants.detuning.abs(), p.kappa));
        out.retain(|(c, w)| c.is_finite() && w.is_finite());
        out
    }
}

/// `(ω_m²μ, ω²μ)`, the spectral densities of `q₋` and `p₋`.
pub fn spectral_density_minus(w: f64, ctx: &SpectralContext) -> (f64, f64) {
    let mu = ctx.mu(w);
    (ctx.params.omega_m1.powi(2) * mu, w * w * mu)
}

/// `ω²ν` without symmetrization.
pub fn spectral_density_plus_raw(w: f64, ctx: &SpectralContext) -> f64 {
    w * w * ctx.nu(w)
}

/// Even part of `ω²ν`; integrates to the same value over the real line.
pub fn spectral_density_plus(w: f64, ctx: &SpectralContext) -> f64 {
    0.5 * (spectral_density_plus_raw(w, ctx) + spectral_density_plus_raw(-w, ctx))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrumControl {
    pub quadrature: QuadratureControl,
    /// Truncation at this multiple of the largest resonance frequency.
    pub cutoff_factor: f64,
    pub check_symmetry: bool,
}

impl Default for SpectrumControl {
    fn default() -> Self {
        Self { quadrature: QuadratureControl::default(), cutoff_factor: 50.0, check_symmetry: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluctuationMoments {
    pub var_q_minus: f64,
    pub var_p_minus: f64,
    pub var_p_plus: f64,
    pub quad_err_q_minus: f64,
    pub quad_err_p_minus: f64,
    pub quad_err_p_plus: f64,
    /// Relative difference between half-line doubling and full-line quadrature,
    /// worst of the three integrals; `None` when the check was skipped.
    pub symmetry_rel_diff: Option<f64>,
    pub cutoff: f64,
}

impl FluctuationMoments {
    pub fn k(&self) -> Result<f64> {
        k_condition(self)
    }

    /// `⟨δq₋²⟩ + ⟨δp₋²⟩`, bounded below by one for a physical state.
    pub fn uncertainty_sum(&self) -> f64 {
        self.var_q_minus + self.var_p_minus
    }

    pub fn satisfies_uncertainty(&self) -> bool {
        self.uncertainty_sum() >= 1.0 - 1e-6
    }

    pub fn check_uncertainty(&self) -> Result<()> {
        if self.satisfies_uncertainty() {
            Ok(())
        } else {
            Err(Error::Unphysical(format!(
                "⟨δq₋²⟩ + ⟨δp₋²⟩ = {} is below the uncertainty bound 1",
                self.uncertainty_sum()
            )))
        }
    }

    pub fn report(&self) -> Result<SpectrumReport> {
        Ok(SpectrumReport { moments: *self, k: self.k()?, satisfies_uncertainty: self.satisfies_uncertainty() })
    }
}

/// Moments plus the derived K-condition, as written by the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    #[serde(flatten)]
    pub moments: FluctuationMoments,
    #[serde(rename = "K")]
    pub k: f64,
    pub satisfies_uncertainty: bool,
}

impl SpectrumReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "var_q_minus,var_p_minus,var_p_plus,K,quad_err_q_minus,quad_err_p_minus,quad_err_p_plus")?;
        let m = &self.moments;
        let cols = [
            m.var_q_minus,
            m.var_p_minus,
            m.var_p_plus,
            self.k,
            m.quad_err_q_minus,
            m.quad_err_p_minus,
            m.quad_err_p_plus,
        ];
        writeln!(w, "{}", cols.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(","))
    }
}

fn breakpoints(ctx: &SpectralContext, cutoff: f64) -> Vec<f64> {
    let mut pts = vec![0.0, cutoff];
    for (c, w) in ctx.resonances() {
        let w = w.max(1e-12 * c.max(1.0));
        for k in [-25.0, -5.0, -1.0, 0.0, 1.0, 5.0, 25.0] {
            let x = c + k * w;
            if x > 0.0 && x < cutoff {
                pts.push(x);
            }
        }
    }
    pts.sort_by(f64::total_cmp);
    pts.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * cutoff);
    pts
}

/// `∫_Ω^∞ g` for `g = c/ω^p·(1 + b/ω² + …)`. The `b` term is read off from
/// `g(Ω)` itself; the error is the size of the next order.
fn tail<F: Fn(f64) -> f64>(g: &F, cutoff: f64, asymptote: f64, power: i32) -> (f64, f64) {
    let lead = asymptote / cutoff.powi(power - 1);
    let delta = cutoff * g(cutoff) - lead;
    let value = lead / f64::from(power - 1) + delta / f64::from(power + 1);
    (value, delta * delta / lead.abs())
}

/// `∫₀^∞ g`, with `g ∼ c/ω^power` beyond the cutoff. Returns `(value, error)`.
fn half_line<F: Fn(f64) -> f64>(
    g: F,
    pts: &[f64],
    asymptote: f64,
    power: i32,
    control: &QuadratureControl,
) -> Result<(f64, f64)> {
    let cutoff = *pts.last().unwrap();
    // half the budget for the finite part, the rest is left to the tail
    let inner = QuadratureControl { rel_tol: 0.5 * control.rel_tol, abs_tol: 0.5 * control.abs_tol, ..*control };
    let r = quadrature::integrate(&g, pts, &inner)?;
    let (tail, tail_err) = tail(&g, cutoff, asymptote, power);
    Ok((r.value + tail, r.error + tail_err))
}

fn full_line<F: Fn(f64) -> f64>(
    g: F,
    pts: &[f64],
    asymptote: f64,
    power: i32,
    control: &QuadratureControl,
) -> Result<f64> {
    let mut all: Vec<f64> = pts.iter().rev().map(|x| -x).collect();
    all.extend_from_slice(&pts[1..]);
    let cutoff = *pts.last().unwrap();
    let r = quadrature::integrate(&g, &all, control)?;
    let (up, _) = tail(&g, cutoff, asymptote, power);
    let (down, _) = tail(&|w: f64| g(-w), cutoff, asymptote, power);
    Ok(r.value + up + down)
}

/// `(1/2π)∫ dω` of the three densities, with stability gating.
pub fn mean_square_fluctuations(ctx: &SpectralContext, control: &SpectrumControl) -> Result<FluctuationMoments> {
    control.quadrature.validate()?;
    if !(control.cutoff_factor > 1.0) {
        return Err(Error::InvalidParameter("cutoff_factor must be > 1".into()));
    }
    let p = &ctx.params;
    let a2 = p.omega_m1 * (p.omega_m1 + ctx.minus_shift);
    if !(a2 > 0.0) {
        return Err(Error::Unstable(format!("difference mode has ω_m(ω_m + W) = {a2} ≤ 0")));
    }
    let stab = floquet::stability_check(&ctx.constants, p)?;
    if !stab.stable {
        return Err(Error::Unstable(format!(
            "Routh–Hurwitz conditions fail (condition1 = {:e}, condition2 = {:e})",
            stab.condition1, stab.condition2
        )));
    }

    let top = ctx.resonances().iter().map(|r| r.0).fold(p.omega_m1.max(p.kappa), f64::max);
    let cutoff = control.cutoff_factor * top;
    let pts = breakpoints(ctx, cutoff);
    let th = ctx.thermal();
    let q = &control.quadrature;

    let gq = |w: f64| spectral_density_minus(w, ctx).0;
    let gp = |w: f64| spectral_density_minus(w, ctx).1;
    let gpp = |w: f64| spectral_density_plus(w, ctx);
    let cq = p.omega_m1.powi(2) * th;

    let (iq, eq) = half_line(gq, &pts, cq, 4, q)?;
    let (ip, ep) = half_line(gp, &pts, th, 2, q)?;
    let (ipp, epp) = half_line(gpp, &pts, th, 2, q)?;

    let symmetry_rel_diff = if control.check_symmetry {
        let fq = full_line(gq, &pts, cq, 4, q)?;
        let fp = full_line(gp, &pts, th, 2, q)?;
        let fpp = full_line(|w| spectral_density_plus_raw(w, ctx), &pts, th, 2, q)?;
        let rel = |half: f64, full: f64| (2.0 * half - full).abs() / full.abs();
        let worst = rel(iq, fq).max(rel(ip, fp)).max(rel(ipp, fpp));
        if worst > SYMMETRY_TOL {
            return Err(Error::ToleranceNotMet { achieved: worst, requested: SYMMETRY_TOL });
        }
        Some(worst)
    } else {
        None
    };

    // (1/2π)·2·∫₀^∞
    let m = FluctuationMoments {
        var_q_minus: iq / PI,
        var_p_minus: ip / PI,
        var_p_plus: ipp / PI,
        quad_err_q_minus: eq / PI,
        quad_err_p_minus: ep / PI,
        quad_err_p_plus: epp / PI,
        symmetry_rel_diff,
        cutoff,
    };
    for (v, e) in
        [(m.var_q_minus, m.quad_err_q_minus), (m.var_p_minus, m.quad_err_p_minus), (m.var_p_plus, m.quad_err_p_plus)]
    {
        let requested = q.target(v);
        if e > requested {
            return Err(Error::ToleranceNotMet { achieved: e, requested });
        }
        if !(v > 0.0) {
            return Err(Error::Unphysical(format!("non-positive variance {v}")));
        }
    }
    Ok(m)
}

/// `K = 1/(4⟨δp₊²⟩) + ⟨δp₋²⟩ − 1`; positive when the entanglement and
/// synchronization windows for `⟨δq₋²⟩` overlap.
pub fn k_condition(m: &FluctuationMoments) -> Result<f64> {
    k_from_variances(m.var_p_minus, m.var_p_plus)
}

pub fn k_from_variances(var_p_minus: f64, var_p_plus: f64) -> Result<f64> {
    if !(var_p_plus > 0.0) {
        return Err(Error::Domain(format!("⟨δp₊²⟩ must be > 0 (got {var_p_plus})")));
    }
    Ok(1.0 / (4.0 * var_p_plus) + var_p_minus - 1.0)
}

/// `S_q = ⟨δp₊²⟩/(E_D + ⟨δp₋²⟩⟨δp₊²⟩)`.
pub fn sync_from_entanglement(ed: f64, var_p_minus: f64, var_p_plus: f64) -> Result<f64> {
    let den = ed + var_p_minus * var_p_plus;
    if !(den > 0.0) {
        return Err(Error::Domain(format!("E_D + ⟨δp₋²⟩⟨δp₊²⟩ = {den} is not positive")));
    }
    Ok(var_p_plus / den)
}
