//! Gaussian trajectory simulation of stroboscopic probing.
//!
//! Each trajectory carries the conditional mean of (X, P) given its own
//! record; the conditional covariance obeys a deterministic Riccati recursion
//! that is the same for every trajectory, so it is computed once per run into
//! a [`Plan`]. Records are drawn from their exact conditional distribution,
//! one standard normal per illuminated grid step.
//!
//! Photon flux, record and back-action follow the input–output relations
//! S_y^out = S_y^in + β S_x √J_x X and dP = β √J_x S_z dt with
//! ⟨S_y S_y⟩ = ⟨S_z S_z⟩ = (S_x/2) δ(t − t′), S_x = Φ/2.

pub mod dump;
pub mod moments;

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physics::{CouplingSet, EnsembleConfig};

pub type Vec2 = [f64; 2];
pub type Mat2 = [[f64; 2]; 2];

pub const DET_TOL: f64 = 1e-9;

fn mat_mul(a: &Mat2, b: &Mat2) -> Mat2 {
    [
        [
            a[0][0] * b[0][0] + a[0][1] * b[1][0],
            a[0][0] * b[0][1] + a[0][1] * b[1][1],
        ],
        [
            a[1][0] * b[0][0] + a[1][1] * b[1][0],
            a[1][0] * b[0][1] + a[1][1] * b[1][1],
        ],
    ]
}

fn mat_vec(a: &Mat2, v: &Vec2) -> Vec2 {
    [
        a[0][0] * v[0] + a[0][1] * v[1],
        a[1][0] * v[0] + a[1][1] * v[1],
    ]
}

/// a·Σ·aᵀ
fn congruence(a: &Mat2, s: &Mat2) -> Mat2 {
    let t = mat_mul(a, s);
    [
        [
            t[0][0] * a[0][0] + t[0][1] * a[0][1],
            t[0][0] * a[1][0] + t[0][1] * a[1][1],
        ],
        [
            t[1][0] * a[0][0] + t[1][1] * a[0][1],
            t[1][0] * a[1][0] + t[1][1] * a[1][1],
        ],
    ]
}

fn scale(a: &Mat2, k: f64) -> Mat2 {
    [[a[0][0] * k, a[0][1] * k], [a[1][0] * k, a[1][1] * k]]
}

/// Free precession over phase θ: X → X cos θ + P sin θ, P → P cos θ − X sin θ.
pub fn rotation(theta: f64) -> Mat2 {
    let (s, c) = theta.sin_cos();
    [[c, s], [-s, c]]
}

pub fn det(m: &Mat2) -> f64 {
    m[0][0] * m[1][1] - m[0][1] * m[1][0]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OscillatorState {
    pub mean: Vec2,
    pub cov: Mat2,
    /// Macroscopic spin used to normalize X = J_z/√J_x.
    pub jx: f64,
    pub time: f64,
    /// False for the unpolarized reference state, which has no back-action.
    pub polarized: bool,
    /// Variance dark relaxation drives toward.
    pub bath_var: f64,
}

impl OscillatorState {
    /// Mean excitation number Var(X) + Var(P) − 1.
    pub fn n_bar(&self) -> f64 {
        self.cov[0][0] + self.cov[1][1] - 1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitKind {
    Ground,
    ThermalOccupancy { n_bar: f64 },
    UnpolarizedThermal,
}

/// Var(X) of the unpolarized F manifold in units of the fully oriented
/// J_x = N_at·F: ((2F+1)/(4F))·(F+1)/3.
pub fn unpolarized_x_variance(f: u32) -> f64 {
    let f = f as f64;
    (2.0 * f + 1.0) * (f + 1.0) / (12.0 * f)
}

pub fn init_state(kind: InitKind, ensemble: &EnsembleConfig) -> Result<OscillatorState> {
    let (v, jx, polarized) = match kind {
        InitKind::Ground => (0.5, ensemble.jx, true),
        InitKind::ThermalOccupancy { n_bar } => {
            if !(n_bar >= 0.0) {
                return Err(Error::domain("n_bar", n_bar, ">= 0"));
            }
            (0.5 * (1.0 + n_bar), ensemble.jx, true)
        }
        InitKind::UnpolarizedThermal => (
            unpolarized_x_variance(ensemble.f),
            ensemble.jx_full(),
            false,
        ),
    };
    Ok(OscillatorState {
        mean: [0.0, 0.0],
        cov: [[v, 0.0], [0.0, v]],
        jx,
        time: 0.0,
        polarized,
        bath_var: if polarized { 0.5 } else { v },
    })
}

/// Spin-temperature populations p_m ∝ εᵐ over m = −F..F, with ⟨m⟩/F = −orientation.
pub fn spin_temperature_populations(orientation: f64, f: u32) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&orientation) {
        return Err(Error::domain("orientation", orientation, "in [0, 1]"));
    }
    let n = 2 * f as usize + 1;
    let fm = f as f64;
    if orientation >= 1.0 {
        let mut p = vec![0.0; n];
        p[0] = 1.0;
        return Ok(p);
    }
    if orientation == 0.0 {
        return Ok(vec![1.0 / n as f64; n]);
    }
    // index i ↔ m = i − F; weights εᵐ relative to m = −F are εⁱ
    let pops = |ln_eps: f64| -> Vec<f64> {
        let w: Vec<f64> = (0..n).map(|i| (ln_eps * i as f64).exp()).collect();
        let z: f64 = w.iter().sum();
        w.into_iter().map(|x| x / z).collect()
    };
    let mean_over_f = |ln_eps: f64| -> f64 {
        pops(ln_eps)
            .iter()
            .enumerate()
            .map(|(i, p)| p * (i as f64 - fm))
            .sum::<f64>()
            / fm
    };
    // ⟨m⟩/F rises monotonically from −1 (ε → 0) to 0 (ε = 1)
    let target = -orientation;
    let (mut lo, mut hi) = (-60.0, 0.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean_over_f(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(pops(0.5 * (lo + hi)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeKind {
    Flat,
    ExpRising,
    ExpFalling,
}

/// Temporal weight of the photocurrent over one pulse, normalized to ∫u² = 2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeFunction {
    pub kind: ModeKind,
    /// γ_m, 1/s
    pub rate: f64,
}

impl ModeFunction {
    pub fn flat() -> Self {
        ModeFunction {
            kind: ModeKind::Flat,
            rate: 0.0,
        }
    }

    pub fn exp_rising(rate: f64) -> Self {
        ModeFunction {
            kind: ModeKind::ExpRising,
            rate,
        }
    }

    pub fn exp_falling(rate: f64) -> Self {
        ModeFunction {
            kind: ModeKind::ExpFalling,
            rate,
        }
    }

    /// u(t) for t measured from the start of a pulse of length τ.
    pub fn weight(&self, t: f64, tau: f64) -> f64 {
        let g = self.rate;
        let x = 2.0 * g * tau;
        match self.kind {
            ModeKind::Flat => (2.0 / tau).sqrt(),
            _ if x.abs() < 1e-12 => (2.0 / tau).sqrt(),
            ModeKind::ExpRising => (4.0 * g / x.exp_m1()).sqrt() * (g * t).exp(),
            ModeKind::ExpFalling => (4.0 * g / -(-x).exp_m1()).sqrt() * (-g * t).exp(),
        }
    }
}

/// Probe timing and probe-induced processes for the two-pulse protocol.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseSchedule {
    /// Larmor frequency Ω, rad/s.
    pub omega: f64,
    pub steps_per_period: usize,
    pub duty: f64,
    pub tau_a: f64,
    /// Zero for a single-pulse run.
    pub tau_b: f64,
    /// Period-averaged flux of pulse B, and of pulse A unless `flux_a` is set.
    pub flux_bar: f64,
    pub flux_a: Option<f64>,
    /// Dark time between the pulses, s.
    pub gap: f64,
    pub tensor_enabled: bool,
    /// Spin loss rate (1/s) acting at all times; J_x ∝ e^{−rate·t}.
    pub depump_rate: f64,
    /// ζ/d: probe-induced noise per unit κ̃².
    pub probe_noise: f64,
}

impl PulseSchedule {
    /// Schedule with pulse lengths and gap given in whole oscillation cycles.
    pub fn from_cycles(omega: f64, duty: f64, cycles_a: u32, cycles_b: u32, flux_bar: f64) -> Self {
        let period = 2.0 * PI / omega;
        PulseSchedule {
            omega,
            steps_per_period: 256,
            duty,
            tau_a: cycles_a as f64 * period,
            tau_b: cycles_b as f64 * period,
            flux_bar,
            flux_a: None,
            gap: 0.0,
            tensor_enabled: false,
            depump_rate: 0.0,
            probe_noise: 0.0,
        }
    }

    pub fn period(&self) -> f64 {
        2.0 * PI / self.omega
    }

    pub fn flux_of(&self, pulse: Pulse) -> f64 {
        match pulse {
            Pulse::A => self.flux_a.unwrap_or(self.flux_bar),
            Pulse::B => self.flux_bar,
        }
    }

    pub fn tau_of(&self, pulse: Pulse) -> f64 {
        match pulse {
            Pulse::A => self.tau_a,
            Pulse::B => self.tau_b,
        }
    }

    fn whole_cycles(&self, name: &str, t: f64) -> Result<usize> {
        let n = t / self.period();
        let r = n.round();
        if !(t >= 0.0) || (n - r).abs() > 1e-9 * r.max(1.0) {
            return Err(Error::Grid(format!(
                "{name} = {t} s is not a whole number of periods"
            )));
        }
        Ok(r as usize)
    }

    /// Validated cycle counts (A, gap, B).
    pub fn cycles(&self) -> Result<(usize, usize, usize)> {
        if !(self.omega > 0.0) {
            return Err(Error::domain("omega", self.omega, "> 0"));
        }
        if !(self.duty > 0.0 && self.duty <= 1.0) {
            return Err(Error::domain("duty", self.duty, "in (0, 1]"));
        }
        if self.steps_per_period == 0 || self.steps_per_period % 4 != 0 {
            return Err(Error::Grid(format!(
                "steps_per_period = {} must be a positive multiple of 4",
                self.steps_per_period
            )));
        }
        let window_steps = self.duty * self.steps_per_period as f64 / 2.0;
        if window_steps < 4.0 {
            return Err(Error::Grid(format!(
                "strobe window spans {window_steps:.2} steps; need at least 4"
            )));
        }
        if !(self.flux_bar >= 0.0) || !(self.flux_of(Pulse::A) >= 0.0) {
            return Err(Error::domain("flux_bar", self.flux_bar, ">= 0"));
        }
        if !(self.depump_rate >= 0.0) {
            return Err(Error::domain("depump_rate", self.depump_rate, ">= 0"));
        }
        if !(self.probe_noise >= 0.0) {
            return Err(Error::domain("probe_noise", self.probe_noise, ">= 0"));
        }
        let a = self.whole_cycles("tau_a", self.tau_a)?;
        if a == 0 {
            return Err(Error::Grid("tau_a must span at least one period".into()));
        }
        Ok((
            a,
            self.whole_cycles("gap", self.gap)?,
            self.whole_cycles("tau_b", self.tau_b)?,
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Pulse {
    A,
    B,
}

/// Illuminated fraction of [t0, t1] and the centre of the illuminated part.
///
/// Windows of width D·T/2 are centred on every multiple of T/2.
fn illumination(t0: f64, t1: f64, duty: f64, period: f64) -> (f64, f64) {
    let half = duty * period / 4.0;
    let spacing = period / 2.0;
    let m_lo = ((t0 - half) / spacing).floor() as i64;
    let m_hi = ((t1 + half) / spacing).ceil() as i64;
    let mut covered = 0.0;
    let mut moment = 0.0;
    for m in m_lo..=m_hi {
        let c = m as f64 * spacing;
        let a = t0.max(c - half);
        let b = t1.min(c + half);
        if b > a {
            covered += b - a;
            moment += (b - a) * 0.5 * (a + b);
        }
    }
    let f = (covered / (t1 - t0)).min(1.0);
    let tc = if covered > 0.0 {
        moment / covered
    } else {
        0.5 * (t0 + t1)
    };
    (f, tc)
}

/// One grid step as seen by every trajectory.
#[derive(Debug, Clone, Copy)]
pub enum PlanOp {
    /// m ← F·m
    Dark { f: Mat2 },
    /// r = H·m + √S·z;  m ← F·m + K·z;  Y[cycle] += r·(cw, sw)
    Lit {
        f: Mat2,
        h: Vec2,
        sqrt_s: f64,
        k: Vec2,
        cw: f64,
        sw: f64,
        cycle: u32,
    },
}

/// Per-step physical parameters shared by the trajectory plan and the exact
/// moment engine.
#[derive(Debug, Clone, Copy)]
pub(crate) struct StepPhysics {
    /// Rotation to the centre of the illuminated part.
    pub r1: Mat2,
    /// Rotation from there to the end of the step.
    pub r2: Mat2,
    /// Record gain h on X at the centre (0 in the dark).
    pub h: f64,
    /// Shot-noise amplitude σ of the illuminated slice.
    pub sigma: f64,
    /// Amplitude of w_y in the record; equals σ without the tensor term.
    pub r_sigma: f64,
    /// Kicks per unit w_y and w_z, added after the core map.
    pub g_y: Vec2,
    pub g_z: Vec2,
    /// Core amplitude factor on both quadratures while illuminated.
    pub d: f64,
    /// Dissipative channel Σ → a·Σ + q·I, m → √a·m.
    pub a: f64,
    pub q: f64,
    pub cw: f64,
    pub sw: f64,
    pub cycle: Option<u32>,
    pub pulse: Option<Pulse>,
}

impl StepPhysics {
    pub fn lit(&self) -> bool {
        self.sigma > 0.0
    }

    /// Deterministic part of the map, R₂·√a·d·R₁.
    pub fn transfer(&self) -> Mat2 {
        scale(&mat_mul(&self.r2, &self.r1), self.a.sqrt() * self.d)
    }
}

/// Coupling quantities the simulator needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimCoupling {
    /// β including any cavity enhancement.
    pub beta: f64,
    /// Tensor ratio w.
    pub w: f64,
    /// Sign of the swap rate; sets the direction of the tensor damping.
    pub swap_sign: f64,
}

impl From<&CouplingSet> for SimCoupling {
    fn from(c: &CouplingSet) -> Self {
        SimCoupling {
            beta: c.effective_beta(),
            w: c.w,
            swap_sign: if c.gamma_sw < 0.0 { -1.0 } else { 1.0 },
        }
    }
}

/// (cosh √λ, sinh √λ / √λ), continued to λ < 0.
fn slice_cosh_sinhc(lambda: f64) -> (f64, f64) {
    if lambda.abs() < 1e-8 {
        return (1.0 + lambda / 2.0, 1.0 + lambda / 6.0);
    }
    let k = lambda.abs().sqrt();
    if lambda > 0.0 {
        (k.cosh(), k.sinh() / k)
    } else {
        (k.cos(), k.sin() / k)
    }
}

/// Per-step physics over a run: pulse A, dark gap, pulse B.
pub(crate) struct Timeline {
    pub steps: Vec<StepPhysics>,
    pub cycles_a: usize,
    pub cycles_b: usize,
    /// J_x at the end of pulse A over its initial value.
    pub f_d: f64,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn timeline(
    schedule: &PulseSchedule,
    coupling: &SimCoupling,
    ensemble: &EnsembleConfig,
    start: &OscillatorState,
    mode_a: &ModeFunction,
    mode_b: &ModeFunction,
) -> Result<Timeline> {
    let (na, ngap, nb) = schedule.cycles()?;
    let period = schedule.period();
    let spp = schedule.steps_per_period;
    let dt = period / spp as f64;
    let b_factor = 1.0 + crate::analytics::sinc(PI * schedule.duty);
    let t_b = (na + ngap) as f64 * period;

    let depump = if start.polarized {
        schedule.depump_rate
    } else {
        0.0
    };
    let dark_a = (-2.0 * ensemble.gamma_dark * dt).exp();
    let depump_a = (-depump * dt).exp();

    let total_cycles = na + ngap + nb;
    let mut steps = Vec::with_capacity(total_cycles * spp);
    for i in 0..total_cycles * spp {
        let cycle = i / spp;
        let t0 = start.time + i as f64 * dt;
        let t1 = t0 + dt;
        let (pulse, cyc_index, t_local, tau, mode) = if cycle < na {
            (
                Some(Pulse::A),
                Some(cycle as u32),
                t0 - start.time,
                schedule.tau_a,
                mode_a,
            )
        } else if cycle >= na + ngap {
            (
                Some(Pulse::B),
                Some((cycle - ngap) as u32),
                t0 - start.time - t_b,
                schedule.tau_b,
                mode_b,
            )
        } else {
            (None, None, 0.0, 0.0, mode_a)
        };
        let (frac, tc) = match pulse {
            Some(_) => illumination(t0, t1, schedule.duty, period),
            None => (0.0, 0.5 * (t0 + t1)),
        };
        // J_x at the centre of the step
        let jx = start.jx * (-depump * (tc - start.time)).exp();
        let g = coupling.beta * jx.sqrt();

        let mut st = StepPhysics {
            r1: rotation(schedule.omega * (tc - t0)),
            r2: rotation(schedule.omega * (t1 - tc)),
            h: 0.0,
            sigma: 0.0,
            r_sigma: 0.0,
            g_y: [0.0, 0.0],
            g_z: [0.0, 0.0],
            d: 1.0,
            a: 1.0,
            q: 0.0,
            cw: 0.0,
            sw: 0.0,
            cycle: cyc_index,
            pulse,
        };

        let mut a_probe = 1.0;
        if let Some(p) = pulse {
            if frac > 0.0 {
                let flux_peak = schedule.flux_of(p) / schedule.duty;
                let s2 = flux_peak * frac * dt / 4.0;
                if s2 > 0.0 {
                    let sigma = s2.sqrt();
                    st.sigma = sigma;
                    st.r_sigma = sigma;
                    st.h = 2.0 * g * s2;
                    let u = mode.weight(tc - (t0 - t_local), tau);
                    let phase = schedule.omega * tc;
                    st.cw = phase.cos() * u;
                    st.sw = phase.sin() * u;
                    if start.polarized {
                        st.g_z = [0.0, g * sigma];
                        if schedule.tensor_enabled && coupling.w != 0.0 {
                            // exact map of the slice Hamiltonian G·z·X + B·y·P, with
                            // G·B = 2·a·g·σ²; symplectic, so the conditional state stays physical
                            let a_t = -coupling.swap_sign * g * coupling.w.abs();
                            let (ch, sk) = slice_cosh_sinhc(2.0 * a_t * g * s2);
                            st.h *= sk;
                            st.r_sigma = sigma * ch;
                            st.g_y = [a_t * sigma * sk, 0.0];
                            st.g_z = [0.0, g * sigma * sk];
                            st.d = ch;
                        }
                        let d_eta = schedule.probe_noise * g * g * b_factor * s2;
                        a_probe = (1.0 - d_eta).max(0.0);
                    }
                }
            }
        }
        // dark relaxation toward the bath, probe noise and spin loss toward the CSS
        let a = dark_a * a_probe * depump_a;
        let q = depump_a * a_probe * (1.0 - dark_a) * start.bath_var
            + depump_a * (1.0 - a_probe) * 0.5
            + (1.0 - depump_a) * 0.5;
        st.a = a;
        st.q = q;
        steps.push(st);
    }
    Ok(Timeline {
        steps,
        cycles_a: na,
        cycles_b: nb,
        f_d: (-depump * schedule.tau_a).exp(),
    })
}

/// Deterministic conditional-covariance recursion and per-trajectory maps.
#[derive(Debug, Clone)]
pub struct Plan {
    pub ops: Vec<PlanOp>,
    pub cycles_a: usize,
    pub cycles_b: usize,
    pub f_d: f64,
    /// Smallest det(Σ) over all steps; `None` for unpolarized states.
    pub min_det: Option<f64>,
    /// Conditional covariance at the end of each pulse.
    pub cov_end_a: Mat2,
    pub cov_end: Mat2,
}

/// One Kalman step: returns the maps for the conditional mean and updates Σ.
fn kalman_step(st: &StepPhysics, cov: &mut Mat2) -> PlanOp {
    let m = st.transfer();
    let pre = scale(&st.r2, st.a.sqrt()); // carries kicks at the centre to the end
    let mut prior = congruence(&m, cov);
    for g in [st.g_y, st.g_z] {
        let n = mat_vec(&pre, &g);
        prior[0][0] += n[0] * n[0];
        prior[0][1] += n[0] * n[1];
        prior[1][0] += n[1] * n[0];
        prior[1][1] += n[1] * n[1];
    }
    prior[0][0] += st.q;
    prior[1][1] += st.q;
    if !st.lit() {
        *cov = prior;
        return PlanOp::Dark { f: m };
    }
    // record r = h·(R₁x)_X + σ·w_y
    let hrow = [st.h * st.r1[0][0], st.h * st.r1[0][1]];
    let sh = mat_vec(cov, &hrow);
    let s = hrow[0] * sh[0] + hrow[1] * sh[1] + st.r_sigma * st.r_sigma;
    let ms = mat_vec(&m, &sh);
    let ny = mat_vec(&pre, &st.g_y);
    let c = [ms[0] + ny[0] * st.r_sigma, ms[1] + ny[1] * st.r_sigma];
    for i in 0..2 {
        for j in 0..2 {
            prior[i][j] -= c[i] * c[j] / s;
        }
    }
    *cov = prior;
    let sqrt_s = s.sqrt();
    PlanOp::Lit {
        f: m,
        h: hrow,
        sqrt_s,
        k: [c[0] / sqrt_s, c[1] / sqrt_s],
        cw: st.cw,
        sw: st.sw,
        cycle: st.cycle.unwrap_or(0),
    }
}

impl Plan {
    pub fn build(
        schedule: &PulseSchedule,
        coupling: &SimCoupling,
        ensemble: &EnsembleConfig,
        start: &OscillatorState,
        mode_a: &ModeFunction,
        mode_b: &ModeFunction,
    ) -> Result<Plan> {
        let tl = timeline(schedule, coupling, ensemble, start, mode_a, mode_b)?;
        let mut cov = start.cov;
        let mut ops: Vec<PlanOp> = Vec::with_capacity(tl.steps.len());
        let mut min_det = det(&cov);
        let mut cov_end_a = cov;
        let spp = schedule.steps_per_period;
        for (i, st) in tl.steps.iter().enumerate() {
            let op = kalman_step(st, &mut cov);
            min_det = min_det.min(det(&cov));
            if !cov.iter().flatten().all(|v| v.is_finite()) {
                return Err(Error::Range(format!("covariance diverged at step {i}")));
            }
            match (op, ops.last_mut()) {
                (PlanOp::Dark { f }, Some(PlanOp::Dark { f: prev })) => *prev = mat_mul(&f, prev),
                _ => ops.push(op),
            }
            if i + 1 == tl.cycles_a * spp {
                cov_end_a = cov;
            }
        }
        Ok(Plan {
            ops,
            cycles_a: tl.cycles_a,
            cycles_b: tl.cycles_b,
            f_d: tl.f_d,
            min_det: start.polarized.then_some(min_det),
            cov_end_a,
            cov_end: cov,
        })
    }

    pub fn n_cycles(&self) -> usize {
        self.cycles_a + self.cycles_b
    }

    /// Run one trajectory from mean `m0`, accumulating per-cycle (Y_cos, Y_sin).
    pub fn run(&self, m0: Vec2, rng: &mut ChaCha8Rng, per_cycle: &mut [[f64; 2]]) -> Vec2 {
        let mut m = m0;
        for op in &self.ops {
            match op {
                PlanOp::Dark { f } => m = mat_vec(f, &m),
                PlanOp::Lit {
                    f,
                    h,
                    sqrt_s,
                    k,
                    cw,
                    sw,
                    cycle,
                } => {
                    let z: f64 = StandardNormal.sample(rng);
                    let r = h[0] * m[0] + h[1] * m[1] + sqrt_s * z;
                    let fm = mat_vec(f, &m);
                    m = [fm[0] + k[0] * z, fm[1] + k[1] * z];
                    let y = &mut per_cycle[*cycle as usize];
                    y[0] += r * cw;
                    y[1] += r * sw;
                }
            }
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub q_a: f64,
    pub q_b: f64,
    /// Sine-quadrature counterparts of q_a and q_b.
    pub q_a_sin: f64,
    pub q_b_sin: f64,
    /// (Y_cos, Y_sin) per recorded cycle, pulse A then pulse B.
    pub per_cycle: Option<Vec<[f64; 2]>>,
    /// Conditional mean of (X, P) at the end of the run.
    pub final_mean: Vec2,
    pub seed: u64,
    pub stream: u64,
}

/// Generator for trajectory `index`: ChaCha8 keyed by the base seed, one
/// stream per trajectory, so output does not depend on scheduling.
pub fn trajectory_rng(base_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(index);
    rng
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunOptions {
    pub keep_cycles: bool,
}

#[derive(Debug, Clone)]
pub struct TwoPulseRun {
    pub records: Vec<TrajectoryRecord>,
    pub f_d: f64,
    pub min_det: Option<f64>,
    pub cycles_a: usize,
    pub cycles_b: usize,
    /// Conditional covariance at the end of pulse A and of the run.
    pub cov_end_a: Mat2,
    pub cov_end: Mat2,
}

impl TwoPulseRun {
    pub fn q_a(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.q_a).collect()
    }

    pub fn q_b(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.q_b).collect()
    }

    /// Unconditional covariance of (X, P) at the end: Σ plus the spread of
    /// conditional means.
    pub fn unconditional_end_cov(&self) -> Mat2 {
        let n = self.records.len() as f64;
        let mut mu = [0.0; 2];
        for r in &self.records {
            mu[0] += r.final_mean[0] / n;
            mu[1] += r.final_mean[1] / n;
        }
        let mut c = self.cov_end;
        for r in &self.records {
            let d = [r.final_mean[0] - mu[0], r.final_mean[1] - mu[1]];
            for i in 0..2 {
                for j in 0..2 {
                    c[i][j] += d[i] * d[j] / (n - 1.0);
                }
            }
        }
        c
    }
}

#[allow(clippy::too_many_arguments)]
pub fn run_two_pulse(
    schedule: &PulseSchedule,
    coupling: &CouplingSet,
    ensemble: &EnsembleConfig,
    init: &OscillatorState,
    mode_a: &ModeFunction,
    mode_b: &ModeFunction,
    n_traj: usize,
    base_seed: u64,
) -> Result<TwoPulseRun> {
    run_two_pulse_with(
        schedule,
        &SimCoupling::from(coupling),
        ensemble,
        init,
        mode_a,
        mode_b,
        n_traj,
        base_seed,
        RunOptions::default(),
    )
}

#[allow(clippy::too_many_arguments)]
pub fn run_two_pulse_with(
    schedule: &PulseSchedule,
    coupling: &SimCoupling,
    ensemble: &EnsembleConfig,
    init: &OscillatorState,
    mode_a: &ModeFunction,
    mode_b: &ModeFunction,
    n_traj: usize,
    base_seed: u64,
    opts: RunOptions,
) -> Result<TwoPulseRun> {
    let plan = Plan::build(schedule, coupling, ensemble, init, mode_a, mode_b)?;
    let na = plan.cycles_a;
    let n = plan.n_cycles();
    let records: Vec<TrajectoryRecord> = (0..n_traj as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = trajectory_rng(base_seed, i);
            let mut y = vec![[0.0; 2]; n];
            let final_mean = plan.run(init.mean, &mut rng, &mut y);
            let sum = |range: std::ops::Range<usize>, k: usize| {
                y[range].iter().map(|c| c[k]).sum::<f64>()
            };
            TrajectoryRecord {
                q_a: sum(0..na, 0),
                q_b: sum(na..n, 0),
                q_a_sin: sum(0..na, 1),
                q_b_sin: sum(na..n, 1),
                per_cycle: opts.keep_cycles.then_some(y),
                final_mean,
                seed: base_seed,
                stream: i,
            }
        })
        .collect();
    Ok(TwoPulseRun {
        records,
        f_d: plan.f_d,
        min_det: plan.min_det,
        cycles_a: plan.cycles_a,
        cycles_b: plan.cycles_b,
        cov_end_a: plan.cov_end_a,
        cov_end: plan.cov_end,
    })
}

/// Advance a state by one period of continuous strobing with a flat mode,
/// returning the unweighted per-period quadratures (Y_cos, Y_sin).
pub fn step_period(
    state: &OscillatorState,
    schedule: &PulseSchedule,
    coupling: &CouplingSet,
    ensemble: &EnsembleConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(OscillatorState, f64, f64)> {
    let one = PulseSchedule {
        tau_a: schedule.period(),
        tau_b: 0.0,
        gap: 0.0,
        flux_a: None,
        flux_bar: schedule.flux_of(Pulse::A),
        ..*schedule
    };
    let sc = SimCoupling::from(coupling);
    let flat = ModeFunction::flat();
    let tl = timeline(&one, &sc, ensemble, state, &flat, &flat)?;
    let mut cov = state.cov;
    let mut m = state.mean;
    let mut y = [0.0; 2];
    let unweight = (one.tau_a / 2.0).sqrt();
    for st in &tl.steps {
        match kalman_step(st, &mut cov) {
            PlanOp::Dark { f } => m = mat_vec(&f, &m),
            PlanOp::Lit {
                f,
                h,
                sqrt_s,
                k,
                cw,
                sw,
                ..
            } => {
                let z: f64 = StandardNormal.sample(rng);
                let r = h[0] * m[0] + h[1] * m[1] + sqrt_s * z;
                let fm = mat_vec(&f, &m);
                m = [fm[0] + k[0] * z, fm[1] + k[1] * z];
                y[0] += r * cw * unweight;
                y[1] += r * sw * unweight;
            }
        }
        if state.polarized && det(&cov) < 0.25 - DET_TOL {
            return Err(Error::Range(format!("det(cov) = {} below 1/4", det(&cov))));
        }
    }
    let period = one.period();
    let next = OscillatorState {
        mean: m,
        cov,
        jx: state.jx * (-one.depump_rate * period).exp(),
        time: state.time + period,
        ..*state
    };
    Ok((next, y[0], y[1]))
}

/// Shot-noise variance of the demodulated record of one pulse: the record
/// with the atom–light coupling switched off, estimated from `n_traj` draws.
pub fn shot_noise_reference(
    schedule: &PulseSchedule,
    pulse: Pulse,
    mode: &ModeFunction,
    n_traj: usize,
    base_seed: u64,
) -> Result<f64> {
    let weights = shot_noise_weights(schedule, pulse, mode)?;
    let samples: Vec<f64> = (0..n_traj as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = trajectory_rng(base_seed, i);
            weights
                .iter()
                .map(|&(sigma, cw, _)| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    sigma * z * cw
                })
                .sum::<f64>()
        })
        .collect();
    Ok(crate::estimation::sample_variance(&samples))
}

/// Exact shot-noise variance Σ σ²·(u·cos Ωt)² over the pulse.
pub fn shot_noise_exact(
    schedule: &PulseSchedule,
    pulse: Pulse,
    mode: &ModeFunction,
) -> Result<f64> {
    Ok(shot_noise_quadratures(schedule, pulse, mode)?.0)
}

/// Exact shot-noise variances of the cosine and sine demodulated records.
pub fn shot_noise_quadratures(
    schedule: &PulseSchedule,
    pulse: Pulse,
    mode: &ModeFunction,
) -> Result<(f64, f64)> {
    Ok(shot_noise_weights(schedule, pulse, mode)?
        .iter()
        .fold((0.0, 0.0), |(c, s), (sig, cw, sw)| {
            (c + sig * sig * cw * cw, s + sig * sig * sw * sw)
        }))
}

fn shot_noise_weights(
    schedule: &PulseSchedule,
    pulse: Pulse,
    mode: &ModeFunction,
) -> Result<Vec<(f64, f64, f64)>> {
    let one = PulseSchedule {
        tau_a: schedule.tau_of(pulse),
        tau_b: 0.0,
        gap: 0.0,
        flux_a: Some(schedule.flux_of(pulse)),
        tensor_enabled: false,
        ..*schedule
    };
    let off = SimCoupling {
        beta: 0.0,
        w: 0.0,
        swap_sign: 1.0,
    };
    let ens = EnsembleConfig {
        n_at: 1.0,
        orientation: 0.0,
        jx: 0.0,
        gamma_dark: 0.0,
        t1: 1.0,
        f: 1,
    };
    let start = OscillatorState {
        mean: [0.0; 2],
        cov: [[0.5, 0.0], [0.0, 0.5]],
        jx: 0.0,
        time: 0.0,
        polarized: false,
        bath_var: 0.5,
    };
    let tl = timeline(&one, &off, &ens, &start, mode, mode)?;
    Ok(tl
        .steps
        .iter()
        .filter(|s| s.lit())
        .map(|s| (s.sigma, s.cw, s.sw))
        .collect())
}

/// β giving the requested κ̃² for a pulse of `n_ph` photons at duty `duty`
/// on a spin `jx`: κ̃² = β²·J_x·N_ph·(1 + sinc πD)/4.
pub fn beta_for_kappa_tilde_sq(kappa_tilde_sq: f64, jx: f64, n_ph: f64, duty: f64) -> f64 {
    let b = 1.0 + crate::analytics::sinc(PI * duty);
    (4.0 * kappa_tilde_sq / (jx * n_ph * b)).sqrt()
}

#[cfg(test)]
mod tests;
