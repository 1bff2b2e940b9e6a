//! Atom–light–cavity coupling parameters.
//!
//! Frequencies are angular (rad/s) throughout; the JSON parameter document
//! uses Hz and is converted on load. Units follow ħ = c = 1, so the coupling
//! rate `beta` is dimensionless and κ² counts photons × spins.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cs D2 line from the F = 4 ground manifold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AtomicTransition {
    /// Natural linewidth Γ (FWHM), rad/s.
    pub gamma: f64,
    /// Transition wavelength, m.
    pub lambda: f64,
    /// Spacing F'=3 ↔ F'=5, rad/s.
    pub delta_35: f64,
    /// Spacing F'=4 ↔ F'=5, rad/s.
    pub delta_45: f64,
    /// Ground-state total spin.
    pub f: u32,
}

impl AtomicTransition {
    /// Published Cs D2 constants (Steck, "Cesium D Line Data").
    pub fn cesium_d2() -> Self {
        AtomicTransition {
            gamma: 2.0 * PI * 5.234e6,
            lambda: 852.347_27e-9,
            delta_35: 2.0 * PI * (251.0916e6 + 201.2871e6),
            delta_45: 2.0 * PI * 251.0916e6,
            f: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) {
            return Err(Error::domain("gamma", self.gamma, "> 0"));
        }
        if !(self.lambda > 0.0) {
            return Err(Error::domain("lambda", self.lambda, "> 0"));
        }
        if !(self.delta_45 > 0.0) {
            return Err(Error::domain("delta_45", self.delta_45, "> 0"));
        }
        if !(self.delta_35 > self.delta_45) {
            return Err(Error::domain("delta_35", self.delta_35, "> delta_45"));
        }
        if self.f == 0 {
            return Err(Error::domain("F", 0.0, ">= 1"));
        }
        Ok(())
    }

    /// Default guard band around the resonances: ten natural linewidths.
    pub fn default_guard(&self) -> f64 {
        10.0 * self.gamma
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleConfig {
    pub n_at: f64,
    /// Spin orientation p ∈ [0, 1].
    pub orientation: f64,
    /// Macroscopic spin J_x = p·N_at·F.
    pub jx: f64,
    /// Transverse decay rate in the dark, 1/s.
    pub gamma_dark: f64,
    /// Population lifetime T₁, s.
    pub t1: f64,
    /// Ground-state total spin of the probed manifold.
    pub f: u32,
}

impl EnsembleConfig {
    pub fn new(n_at: f64, orientation: f64, f: u32, gamma_dark: f64, t1: f64) -> Result<Self> {
        let e = EnsembleConfig {
            n_at,
            orientation,
            jx: orientation * n_at * f as f64,
            gamma_dark,
            t1,
            f,
        };
        e.validate(f)?;
        Ok(e)
    }

    /// J_x of the fully oriented ensemble, N_at·F.
    pub fn jx_full(&self) -> f64 {
        self.n_at * self.f as f64
    }

    pub fn validate(&self, f: u32) -> Result<()> {
        if !(self.n_at > 0.0) {
            return Err(Error::domain("n_at", self.n_at, "> 0"));
        }
        if !(0.0..=1.0).contains(&self.orientation) {
            return Err(Error::domain("orientation", self.orientation, "in [0, 1]"));
        }
        if self.jx > self.n_at * f as f64 * (1.0 + 1e-12) {
            return Err(Error::domain("jx", self.jx, "<= n_at * F"));
        }
        if !(self.gamma_dark >= 0.0) {
            return Err(Error::domain("gamma_dark", self.gamma_dark, ">= 0"));
        }
        if !(self.t1 > 0.0) {
            return Err(Error::domain("t1", self.t1, "> 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolarizationAxis {
    X,
    Y,
}

impl PolarizationAxis {
    /// Sign of the mean Stokes component S_x for light polarized along this axis.
    pub fn stokes_sign(self) -> f64 {
        match self {
            PolarizationAxis::X => 1.0,
            PolarizationAxis::Y => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeConfig {
    /// Δ from F=4 → F'=5, rad/s; negative is blue detuning.
    pub detuning: f64,
    /// Interaction cross-section, m².
    pub area: f64,
    /// Period-averaged photon flux Φ̄, photons/s.
    pub flux_bar: f64,
    /// Pulse length τ, s.
    pub duration: f64,
    pub polarization: PolarizationAxis,
}

impl ProbeConfig {
    pub fn n_ph(&self) -> f64 {
        self.flux_bar * self.duration
    }

    pub fn validate(&self) -> Result<()> {
        if self.detuning == 0.0 || !self.detuning.is_finite() {
            return Err(Error::domain("detuning", self.detuning, "finite and != 0"));
        }
        if !(self.area > 0.0) {
            return Err(Error::domain("area", self.area, "> 0"));
        }
        if !(self.flux_bar >= 0.0) {
            return Err(Error::domain("flux_bar", self.flux_bar, ">= 0"));
        }
        if !(self.duration > 0.0) {
            return Err(Error::domain("duration", self.duration, "> 0"));
        }
        Ok(())
    }
}

/// Interaction parameters derived from the physical configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingSet {
    pub a0: f64,
    pub a1: f64,
    pub a2: f64,
    pub beta: f64,
    pub kappa: f64,
    pub kappa_tilde: f64,
    /// Tensor-to-vector ratio 14·a₂/a₁.
    pub w: f64,
    /// Swap (tensor) damping rate, 1/s; sign set by the probe polarization.
    pub gamma_sw: f64,
    /// J_x the coupling was evaluated at.
    pub jx: f64,
    /// Photons in the pulse, Φ̄τ.
    pub n_ph: f64,
    pub duty: f64,
}

impl CouplingSet {
    /// Coupling built directly from a rate β, bypassing the atomic structure.
    ///
    /// Used by simulations that are parameterized by the measurement strength
    /// rather than by detuning and geometry.
    pub fn from_beta(beta: f64, jx: f64, n_ph: f64, duty: f64) -> Self {
        let b = 1.0 + crate::analytics::sinc(PI * duty);
        let kappa = 0.5 * beta * (jx * n_ph).sqrt();
        CouplingSet {
            a0: 0.0,
            a1: 0.0,
            a2: 0.0,
            beta,
            kappa,
            kappa_tilde: kappa * b.sqrt(),
            w: 0.0,
            gamma_sw: 0.0,
            jx,
            n_ph,
            duty,
        }
    }

    /// Rate that reproduces κ (including any cavity enhancement) in the
    /// input–output equations: κ = (β/2)·√(J_x·N_ph).
    pub fn effective_beta(&self) -> f64 {
        if self.jx <= 0.0 || self.n_ph <= 0.0 {
            return self.beta;
        }
        2.0 * self.kappa / (self.jx * self.n_ph).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CavityConfig {
    pub t_in: f64,
    pub t_out: f64,
    pub loss: f64,
    pub alpha: f64,
    pub finesse: f64,
}

impl CavityConfig {
    /// High-finesse cavity: 𝓕 ≈ 2π / (T_in + T_out + 𝓛).
    pub fn new(t_in: f64, t_out: f64, loss: f64, alpha: f64) -> Result<Self> {
        for (name, v) in [
            ("t_in", t_in),
            ("t_out", t_out),
            ("loss", loss),
            ("alpha", alpha),
        ] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::domain(name, v, "in [0, 1)"));
            }
        }
        let total = t_in + t_out + loss;
        if total <= 0.0 {
            return Err(Error::domain("t_in + t_out + loss", total, "> 0"));
        }
        Ok(CavityConfig {
            t_in,
            t_out,
            loss,
            alpha,
            finesse: 2.0 * PI / total,
        })
    }

    /// Factor 2𝓕/π multiplying the single-pass coupling.
    pub fn enhancement(&self) -> f64 {
        2.0 * self.finesse / PI
    }
}

/// Scalar, vector and tensor polarizabilities (a₀, a₁, a₂) at detuning Δ.
///
/// Fails if Δ is within `guard` of 0, Δ₃₅ or Δ₄₅.
pub fn polarizabilities_guarded(
    transition: &AtomicTransition,
    detuning: f64,
    guard: f64,
) -> Result<(f64, f64, f64)> {
    for pole in [0.0, transition.delta_35, transition.delta_45] {
        if (detuning - pole).abs() < guard {
            return Err(Error::Pole {
                detuning,
                pole,
                guard,
            });
        }
    }
    let l35 = 1.0 / (1.0 - transition.delta_35 / detuning);
    let l45 = 1.0 / (1.0 - transition.delta_45 / detuning);
    let a0 = 0.25 * (l35 + 7.0 * l45 + 8.0);
    let a1 = (-35.0 * l35 - 21.0 * l45 + 176.0) / 120.0;
    let a2 = (5.0 * l35 - 21.0 * l45 + 16.0) / 240.0;
    Ok((a0, a1, a2))
}

/// [`polarizabilities_guarded`] with the default 10·Γ guard band.
pub fn polarizabilities(transition: &AtomicTransition, detuning: f64) -> Result<(f64, f64, f64)> {
    polarizabilities_guarded(transition, detuning, transition.default_guard())
}

/// Full coupling set for a probe pulse with stroboscopic duty cycle `duty`.
pub fn coupling_set(
    transition: &AtomicTransition,
    ensemble: &EnsembleConfig,
    probe: &ProbeConfig,
    duty: f64,
) -> Result<CouplingSet> {
    transition.validate()?;
    ensemble.validate(transition.f)?;
    probe.validate()?;
    if !(duty > 0.0 && duty <= 1.0) {
        return Err(Error::domain("duty", duty, "in (0, 1]"));
    }
    let (a0, a1, a2) = polarizabilities(transition, probe.detuning)?;
    let prefactor = -transition.gamma / (8.0 * probe.area * probe.detuning)
        * transition.lambda.powi(2)
        / (2.0 * PI);
    let beta = prefactor * a1;
    let n_ph = probe.n_ph();
    let b = 1.0 + crate::analytics::sinc(PI * duty);
    let kappa = 0.5 * beta * (ensemble.jx * n_ph).sqrt();
    let kappa_tilde = (0.25 * beta * beta * ensemble.jx * n_ph * b).sqrt() * kappa.signum();
    let w = if a1 != 0.0 { 14.0 * a2 / a1 } else { 0.0 };
    let gamma_sw =
        -probe.polarization.stokes_sign() * w * beta * beta * ensemble.n_at * probe.flux_bar;
    Ok(CouplingSet {
        a0,
        a1,
        a2,
        beta,
        kappa,
        kappa_tilde,
        w,
        gamma_sw,
        jx: ensemble.jx,
        n_ph,
        duty,
    })
}

/// Scale κ and κ̃ by the cavity factor 2𝓕/π; all other fields are kept.
pub fn cavity_enhance(coupling: &CouplingSet, cavity: &CavityConfig) -> CouplingSet {
    if cavity.finesse < 5.0 {
        log::warn!(
            "finesse {:.3} is below the high-finesse regime assumed by the enhancement factor",
            cavity.finesse
        );
    }
    let g = cavity.enhancement();
    CouplingSet {
        kappa: coupling.kappa * g,
        kappa_tilde: coupling.kappa_tilde * g,
        ..*coupling
    }
}

/// Physical parameter document. Keys match the on-disk JSON exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterSet {
    pub gamma_hz: f64,
    pub lambda_m: f64,
    pub delta35_hz: f64,
    pub delta45_hz: f64,
    #[serde(rename = "F")]
    pub f: u32,
    pub n_at: f64,
    pub orientation: f64,
    /// Decay rate, events per second (no 2π).
    pub gamma_dark_hz: f64,
    pub t1_s: f64,
    pub detuning_hz: f64,
    pub area_m2: f64,
    pub flux_bar: f64,
    pub duration_s: f64,
    pub polarization: PolarizationAxis,
    pub t_in: f64,
    pub t_out: f64,
    pub loss: f64,
    pub alpha: f64,
}

impl Default for ParameterSet {
    /// Experimental operating point: Cs D2, Δ = −2π·1.6 GHz, 𝓕 ≈ 17 cavity,
    /// second pulse of ≈ 27×10⁷ photons in 0.5 ms.
    fn default() -> Self {
        ParameterSet {
            gamma_hz: 5.234e6,
            lambda_m: 852.347_27e-9,
            delta35_hz: 452.3787e6,
            delta45_hz: 251.0916e6,
            f: 4,
            n_at: 1.0e8,
            orientation: 0.995,
            gamma_dark_hz: 100.0,
            t1_s: 17e-3,
            detuning_hz: -1.6e9,
            area_m2: 9.0e-8,
            flux_bar: 5.4e11,
            duration_s: 0.5e-3,
            polarization: PolarizationAxis::Y,
            t_in: 0.003,
            t_out: 0.20,
            loss: 0.13,
            alpha: 0.0,
        }
    }
}

impl ParameterSet {
    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    pub fn transition(&self) -> AtomicTransition {
        AtomicTransition {
            gamma: 2.0 * PI * self.gamma_hz,
            lambda: self.lambda_m,
            delta_35: 2.0 * PI * self.delta35_hz,
            delta_45: 2.0 * PI * self.delta45_hz,
            f: self.f,
        }
    }

    pub fn ensemble(&self) -> Result<EnsembleConfig> {
        EnsembleConfig::new(
            self.n_at,
            self.orientation,
            self.f,
            self.gamma_dark_hz,
            self.t1_s,
        )
    }

    pub fn probe(&self) -> ProbeConfig {
        ProbeConfig {
            detuning: 2.0 * PI * self.detuning_hz,
            area: self.area_m2,
            flux_bar: self.flux_bar,
            duration: self.duration_s,
            polarization: self.polarization,
        }
    }

    pub fn cavity(&self) -> Result<CavityConfig> {
        CavityConfig::new(self.t_in, self.t_out, self.loss, self.alpha)
    }

    /// Coupling with cavity enhancement applied.
    pub fn coupling(&self, duty: f64) -> Result<CouplingSet> {
        let bare = coupling_set(&self.transition(), &self.ensemble()?, &self.probe(), duty)?;
        Ok(cavity_enhance(&bare, &self.cavity()?))
    }

    /// Read a numeric field by its JSON key.
    pub fn get(&self, key: &str) -> Option<f64> {
        let v = serde_json::to_value(self).ok()?;
        v.get(key)?.as_f64()
    }

    /// Overwrite a numeric field by its JSON key.
    pub fn set(&mut self, key: &str, value: f64) -> Result<()> {
        let mut v = serde_json::to_value(&*self)?;
        let slot = v
            .get_mut(key)
            .ok_or_else(|| Error::config(key, "not a physics parameter"))?;
        if !slot.is_number() {
            return Err(Error::config(key, "not numeric"));
        }
        *slot = if key == "F" {
            serde_json::Value::from(value.round() as u64)
        } else {
            serde_json::Value::from(value)
        };
        *self = serde_json::from_value(v).map_err(|e| Error::config(key, e.to_string()))?;
        Ok(())
    }

    pub const KEYS: [&'static str; 18] = [
        "gamma_hz",
        "lambda_m",
        "delta35_hz",
        "delta45_hz",
        "F",
        "n_at",
        "orientation",
        "gamma_dark_hz",
        "t1_s",
        "detuning_hz",
        "area_m2",
        "flux_bar",
        "duration_s",
        "polarization",
        "t_in",
        "t_out",
        "loss",
        "alpha",
    ];
}
