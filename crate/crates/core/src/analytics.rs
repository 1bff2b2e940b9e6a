//! Closed-form predictions for stroboscopic QND probing.
//!
//! Variances of the oscillator quadrature `x` are expressed relative to the
//! zero-point value, so the ground state has `var_x = 1` here; the absolute
//! zero-point imprecision is [`ground_state_x_variance`].

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::physics::CavityConfig;

const SERIES_CUTOFF: f64 = 1e-4;

/// sin(x)/x with sinc(0) = 1.
pub fn sinc(x: f64) -> f64 {
    if x.abs() < SERIES_CUTOFF {
        let x2 = x * x;
        1.0 - x2 / 6.0 + x2 * x2 / 120.0
    } else {
        x.sin() / x
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StrobeProfile {
    pub duty: f64,
    pub sinc_pd: f64,
    /// 1 + sinc(πD)
    pub b: f64,
    /// (1 − sinc(πD)) / (1 + sinc(πD))
    pub c: f64,
}

pub fn strobe_profile(duty: f64) -> Result<StrobeProfile> {
    if !(duty > 0.0 && duty <= 1.0) {
        return Err(Error::domain("duty", duty, "in (0, 1]"));
    }
    let s = if duty == 1.0 { 0.0 } else { sinc(PI * duty) };
    Ok(StrobeProfile {
        duty,
        sinc_pd: s,
        b: 1.0 + s,
        c: (1.0 - s) / (1.0 + s),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VariancePrediction {
    /// Record variance in photon units.
    pub var_sy: f64,
    /// Quadrature variance after the pulse, zero-point units.
    pub var_x_out: f64,
    pub shot_term: f64,
    pub input_term: f64,
    pub ba_term: f64,
}

impl VariancePrediction {
    /// Atomic part of the record noise in shot-noise units.
    pub fn oscillator_noise(&self) -> f64 {
        (self.input_term + self.ba_term) / self.shot_term
    }
}

/// Record and quadrature variances for a flat-mode pulse.
///
/// `var_x_in` is relative to zero-point (ground state = 1).
pub fn predict_variances(
    kappa_tilde: f64,
    profile: &StrobeProfile,
    n_ph: f64,
    var_x_in: f64,
) -> VariancePrediction {
    let k2 = kappa_tilde * kappa_tilde;
    let shot = profile.b * n_ph / 8.0;
    let input_term = shot * k2 * var_x_in;
    let ba_term = shot * profile.c * k2 * k2 / 3.0;
    VariancePrediction {
        var_sy: shot + input_term + ba_term,
        var_x_out: var_x_in + profile.c * k2,
        shot_term: shot,
        input_term,
        ba_term,
    }
}

/// Zero-point imprecision of the strobe-weighted quadrature, (1 + sinc πD)²/8.
pub fn ground_state_x_variance(profile: &StrobeProfile) -> f64 {
    profile.b * profile.b / 8.0
}

/// Conditional squeezing ξ₀² after one pulse, no decoherence.
pub fn conditional_squeezing(kappa_tilde: f64, profile: &StrobeProfile) -> f64 {
    let k2 = kappa_tilde * kappa_tilde;
    let c = profile.c;
    let cov = 1.0 + 0.5 * k2 * c;
    1.0 + k2 * c - k2 * cov * cov / (1.0 + k2 + k2 * k2 * c / 3.0)
}

/// ξ₀² assembled from the per-cycle record correlations in physical units and
/// conditioned with the Gaussian formula. Agrees with [`conditional_squeezing`]
/// to rounding; kept separate as a consistency check.
pub fn conditional_squeezing_from_covariances(kappa_tilde: f64, profile: &StrobeProfile) -> f64 {
    // Arbitrary physical scales; the result depends only on κ̃ and D.
    let beta = 0.731;
    let jx = 1.9e3;
    let period = 2.63e-6;
    let n_m = 37.0;
    let s = profile.sinc_pd;
    let b = profile.b;
    let flux = 4.0 * kappa_tilde * kappa_tilde / (beta * beta * jx * n_m * period * b);

    let shot_per_cycle = flux * period * b / 8.0;
    let var0 = b * b / 8.0;
    // ⟨x_BA(k₁) x_BA(k₂)⟩ = 2·min(k₁, k₂)·c1
    let c1 = beta * beta * jx * flux * period * (1.0 - s) * b * b / 64.0;
    let gain = beta * jx.sqrt() * flux * period / 2.0;

    // Σ_{k₁,k₂<N} 2·min(k₁, k₂) → 2N³/3 and Σ_{k<N} 2k → N² for N ≫ 1.
    let var_record = n_m * shot_per_cycle
        + gain * gain * n_m * n_m * var0
        + gain * gain * c1 * 2.0 * n_m.powi(3) / 3.0;
    let cov = gain * (n_m * var0 + c1 * n_m * n_m);
    let var_x = var0 + 2.0 * n_m * c1;
    (var_x - cov * cov / var_record) / var0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SqueezingPrediction {
    pub xi0_sq: f64,
    pub eta_tau: f64,
    pub xi_sq: f64,
    pub zeta: f64,
    pub d_eff: f64,
}

/// ξ² = ξ₀² + ζκ̃²/d, with the intracavity power factor (2/T₂ − 1) when a
/// cavity is given.
pub fn total_squeezing(
    xi0_sq: f64,
    zeta: f64,
    kappa_tilde: f64,
    d_eff: f64,
    cavity: Option<&CavityConfig>,
) -> Result<SqueezingPrediction> {
    if !(d_eff > 0.0) {
        return Err(Error::domain("d_eff", d_eff, "> 0"));
    }
    if !(zeta >= 0.0) {
        return Err(Error::domain("zeta", zeta, ">= 0"));
    }
    let mut eta = zeta * kappa_tilde * kappa_tilde / d_eff;
    if let Some(cav) = cavity {
        if cav.t_out <= 0.0 {
            return Err(Error::domain("t_out", cav.t_out, "> 0"));
        }
        eta *= 2.0 / cav.t_out - 1.0;
    }
    Ok(SqueezingPrediction {
        xi0_sq,
        eta_tau: eta,
        xi_sq: xi0_sq + eta,
        zeta,
        d_eff,
    })
}

/// Optimal squeezing over photon number and output coupler, with `t2_opt = loss`.
///
/// Returns (ξ²_opt, T₂_opt). Requires q = ζ/((2𝓕/π)d₀) ≤ 1.
pub fn optimal_cavity_squeezing(zeta: f64, d0: f64, finesse: f64, loss: f64) -> Result<(f64, f64)> {
    for (name, v) in [
        ("zeta", zeta),
        ("d0", d0),
        ("finesse", finesse),
        ("loss", loss),
    ] {
        if !(v > 0.0) {
            return Err(Error::domain(name, v, "> 0"));
        }
    }
    let q = zeta / (2.0 * finesse / PI * d0);
    if q > 1.0 {
        return Err(Error::domain("zeta/((2F/pi) d0)", q, "<= 1"));
    }
    let r = q.sqrt();
    Ok(((2.0 - r) * r, loss))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CavityOptimum {
    pub xi_sq: f64,
    pub t2: f64,
    /// Bare coupling κ₀² at the optimum; proportional to the photon number.
    pub kappa0_sq: f64,
    /// Spacing of the coarse T₂ grid around the optimum.
    pub grid_step: f64,
}

/// Intracavity power relative to detected power.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PowerFactor {
    /// 2/T₂ − 1
    Exact,
    /// 2/T₂, the T₂ ≪ 1 form the closed-form optimum is derived from
    HighFinesse,
}

/// ξ² in a cavity at bare coupling κ₀² and output transmission T₂, with
/// probe-induced noise η₀ = ζκ₀²/d₀ scaled by the intracavity power.
pub fn cavity_squeezing(
    kappa0_sq: f64,
    t2: f64,
    zeta: f64,
    d0: f64,
    t_in: f64,
    loss: f64,
    power: PowerFactor,
) -> f64 {
    let g = 4.0 / (t2 + loss + t_in);
    let p = match power {
        PowerFactor::Exact => 2.0 / t2 - 1.0,
        PowerFactor::HighFinesse => 2.0 / t2,
    };
    1.0 / (1.0 + g * g * kappa0_sq) + zeta * kappa0_sq / d0 * p
}

fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Brute-force minimum of [`cavity_squeezing`] over κ₀² and T₂.
///
/// The input coupler is fixed by the finesse at T₂ = loss, T_in = 2π/𝓕 − 2·loss.
/// T₂ is scanned on a log grid in (1e-4, 1) and refined; κ₀² is minimized by
/// golden section in ln κ₀² at every T₂.
pub fn optimize_cavity_numeric(
    zeta: f64,
    d0: f64,
    finesse: f64,
    loss: f64,
    power: PowerFactor,
) -> Result<CavityOptimum> {
    for (name, v) in [
        ("zeta", zeta),
        ("d0", d0),
        ("finesse", finesse),
        ("loss", loss),
    ] {
        if !(v > 0.0) {
            return Err(Error::domain(name, v, "> 0"));
        }
    }
    let t_in = 2.0 * PI / finesse - 2.0 * loss;
    if t_in < -1e-12 {
        return Err(Error::domain("finesse", finesse, "<= pi / loss"));
    }
    let t_in = t_in.max(0.0);
    let best_k = |t2: f64| -> (f64, f64) {
        let ln_k = golden_min(
            |lk| cavity_squeezing(lk.exp(), t2, zeta, d0, t_in, loss, power),
            -30.0,
            30.0,
            1e-10,
        );
        let k = ln_k.exp();
        (k, cavity_squeezing(k, t2, zeta, d0, t_in, loss, power))
    };

    const N: usize = 4000;
    let (lo, hi) = (1e-4f64.ln(), 1f64.ln());
    let step = (hi - lo) / (N - 1) as f64;
    let grid = |i: usize| (lo + step * i as f64).exp();
    let mut best_i = 0;
    let mut best_v = f64::INFINITY;
    for i in 0..N {
        let (_, v) = best_k(grid(i));
        if v < best_v {
            best_v = v;
            best_i = i;
        }
    }
    let a = grid(best_i.saturating_sub(1));
    let b = grid((best_i + 1).min(N - 1));
    let t2 = golden_min(|t| best_k(t).1, a, b, 1e-12 * b);
    let (k, xi) = best_k(t2);
    Ok(CavityOptimum {
        xi_sq: xi,
        t2,
        kappa0_sq: k,
        grid_step: grid(best_i) * (step.exp() - 1.0),
    })
}

/// ∫₀^τ e^{at} dt
fn exp_integral(a: f64, tau: f64) -> f64 {
    let x = a * tau;
    if x.abs() < SERIES_CUTOFF {
        tau * (1.0 + x / 2.0 + x * x / 6.0)
    } else {
        x.exp_m1() / a
    }
}

/// ln ∫₀^τ e^{at} dt, safe for large positive aτ.
fn ln_exp_integral(a: f64, tau: f64) -> f64 {
    let x = a * tau;
    if x > 700.0 {
        x - a.ln() + (-(-x).exp()).ln_1p()
    } else {
        exp_integral(a, tau).ln()
    }
}

/// ∫₀^τ tⁿ e^{at} dt by power series; valid for |aτ| ≲ 1.
fn exp_moment_series(n: i32, a: f64, tau: f64) -> f64 {
    let x = a * tau;
    let mut term = 1.0;
    let mut sum = 0.0;
    for k in 0..40 {
        let add = term / (n + k + 1) as f64;
        sum += add;
        if add.abs() < 1e-18 * sum.abs() {
            break;
        }
        term *= x / (k + 1) as f64;
    }
    sum * tau.powi(n + 1)
}

/// Thermal-noise calibration factor R with
/// Var(record)/PSN = β²S_xτ·R·⟨J_z²⟩ for a decaying spin correlation
/// e^{−γ|t−t′|} weighted by an exponential mode e^{±γ_m t}.
///
/// R → 1 for no decay and R → 0 for γτ → ∞. The value depends on |γ_m| only.
pub fn thermal_calibration_factor(gamma: f64, gamma_m: f64, tau: f64) -> f64 {
    let gm = gamma_m.abs();
    let sigma = gm + gamma;
    let d = gm - gamma;
    if (sigma * tau).abs() < SERIES_CUTOFF {
        let m1 = exp_moment_series(1, d, tau);
        let m2 = exp_moment_series(2, d, tau);
        let m3 = exp_moment_series(3, d, tau);
        let num = m1 + sigma * m2 / 2.0 + sigma * sigma * m3 / 6.0;
        return 2.0 * num / (tau * exp_integral(2.0 * gm, tau));
    }
    let ratio = (ln_exp_integral(d, tau) - ln_exp_integral(2.0 * gm, tau)).exp();
    2.0 * (1.0 - ratio) / (sigma * tau)
}

/// Matched-rate factor (1 + γτ − γτ·coth γτ)/(γτ).
pub fn thermal_calibration_factor_matched(gamma: f64, tau: f64) -> f64 {
    let x = gamma * tau;
    if x.abs() < SERIES_CUTOFF {
        1.0 - x / 3.0 + x.powi(3) / 45.0
    } else {
        // 1 − 2x/(e^{2x} − 1) = 1 + x − x·coth x
        (1.0 - 2.0 * x / (2.0 * x).exp_m1()) / x
    }
}

/// Ground-state oscillator noise (shot-noise units) inferred from the
/// measured thermal-state noise ratio Var/PSN.
pub fn ground_noise_from_thermal(thermal_ratio: f64, f: u32) -> Result<f64> {
    if !(thermal_ratio >= 1.0) {
        return Err(Error::domain("thermal_ratio", thermal_ratio, ">= 1"));
    }
    let f = f as f64;
    Ok(6.0 * f / ((f + 1.0) * (2.0 * f + 1.0)) * (thermal_ratio - 1.0))
}

/// n̄(t) = f·(e^{t/T₁} − 1) for 0 ≤ t ≤ T₁.
pub fn dark_thermalization(t: f64, t1: f64, f_factor: f64) -> Result<f64> {
    if !(t1 > 0.0) {
        return Err(Error::domain("t1", t1, "> 0"));
    }
    if !(f_factor >= 0.0) {
        return Err(Error::domain("f_factor", f_factor, ">= 0"));
    }
    if !(0.0..=t1).contains(&t) {
        return Err(Error::Range(format!("t = {t} outside [0, T1 = {t1}]")));
    }
    Ok(f_factor * (t / t1).exp_m1())
}

/// Bounds F/2 ≤ f(F) ≤ (F+1)(2F+1)/2 on the thermalization prefactor.
pub fn dark_thermalization_bounds(f: u32) -> (f64, f64) {
    let f = f as f64;
    (f / 2.0, (f + 1.0) * (2.0 * f + 1.0) / 2.0)
}
