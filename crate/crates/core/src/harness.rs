//! Scenario configuration, parameter sweeps and output files.
//!
//! A scenario fixes the physics parameters, the probe protocol and one swept
//! variable. Each sweep point runs the simulator, applies the estimators and
//! attaches the closed-form prediction in the same units.
//!
//! Simulated time is compressed: a pulse spans `cycles` oscillation periods
//! of the simulation clock rather than the physical pulse length. Photon
//! numbers, κ̃² and every dimensionless rate·τ product are preserved.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytics::{
    conditional_squeezing, predict_variances, strobe_profile, thermal_calibration_factor,
    total_squeezing,
};
use crate::error::{Error, Result};
use crate::estimation::{
    bootstrap_ci, oscillator_noise, sample_variance, squeezing_report, to_db, RecordEnsemble,
};
use crate::physics::ParameterSet;
use crate::sim::moments::ground_reference;
use crate::sim::{
    beta_for_kappa_tilde_sq, init_state, run_two_pulse_with, shot_noise_quadratures, InitKind,
    ModeFunction, ModeKind, Pulse, PulseSchedule, RunOptions, SimCoupling, TwoPulseRun,
};

pub const PARAMS_ENV: &str = "STRB_DEFAULT_PARAMS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// Oscillator noise Var(q)/PSN − 1 of one pulse.
    SinglePulseNoise,
    /// Oscillator noise per unit κ̃² of one pulse.
    BackActionSweep,
    /// ξ̃² from conditioning pulse B on pulse A.
    TwoPulseSqueezing,
    /// ⟨J_z²⟩ of an unpolarized decaying ensemble from one pulse.
    ThermalCalibration,
}

/// Physics parameter source: a file (relative to the scenario) or the
/// default set, with key overrides applied on top.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseParams {
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub overrides: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeSpec {
    pub kind: ModeKind,
    /// γ_m in units of the dark decay rate.
    #[serde(default = "one")]
    pub rate_over_gamma: f64,
}

fn one() -> f64 {
    1.0
}

/// Probe timing and simulation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeSettings {
    /// Simulation clock Ω/2π, Hz.
    pub omega_hz: f64,
    pub steps_per_period: usize,
    pub duty: f64,
    pub cycles_a: u32,
    pub cycles_b: u32,
    pub gap_cycles: u32,
    /// κ̃² of pulse B (or of the single pulse) at the base parameters; scales
    /// with n_at, orientation, flux_bar and duration_s under a sweep. Taken
    /// from the physics coupling when absent.
    pub kappa_tilde_sq: Option<f64>,
    /// κ̃² of pulse A; equal-flux value when absent.
    pub kappa_tilde_sq_a: Option<f64>,
    pub tensor: bool,
    /// ζ/d_eff.
    pub probe_noise: f64,
    /// Spin loss rate during the run, 1/s of physical time.
    pub depump_rate: f64,
    /// γτ of the dark decay; the parameter set's gamma_dark_hz·duration_s when absent.
    pub gamma_tau: Option<f64>,
    pub init: InitKind,
    pub mode: Option<ModeSpec>,
    pub bootstrap: usize,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        ProbeSettings {
            omega_hz: 1.0,
            steps_per_period: 128,
            duty: 0.15,
            cycles_a: 50,
            cycles_b: 50,
            gap_cycles: 0,
            kappa_tilde_sq: None,
            kappa_tilde_sq_a: None,
            tensor: false,
            probe_noise: 0.0,
            depump_rate: 0.0,
            gamma_tau: None,
            init: InitKind::Ground,
            mode: None,
            bootstrap: 400,
        }
    }
}

const PROBE_KEYS: [&str; 9] = [
    "duty",
    "kappa_tilde_sq",
    "kappa_tilde_sq_a",
    "cycles_a",
    "cycles_b",
    "probe_noise",
    "depump_rate",
    "gamma_tau",
    "steps_per_period",
];

impl ProbeSettings {
    /// Set a probe setting by its sweep key.
    pub fn set(&mut self, key: &str, v: f64) -> Result<()> {
        let count = |v: f64| -> Result<u32> {
            if v >= 1.0 && v.fract() == 0.0 {
                Ok(v as u32)
            } else {
                Err(Error::config(key, format!("{v} is not a positive integer")))
            }
        };
        match key {
            "duty" => self.duty = v,
            "kappa_tilde_sq" => self.kappa_tilde_sq = Some(v),
            "kappa_tilde_sq_a" => self.kappa_tilde_sq_a = Some(v),
            "cycles_a" => self.cycles_a = count(v)?,
            "cycles_b" => self.cycles_b = count(v)?,
            "probe_noise" => self.probe_noise = v,
            "depump_rate" => self.depump_rate = v,
            "gamma_tau" => self.gamma_tau = Some(v),
            "steps_per_period" => self.steps_per_period = count(v)? as usize,
            _ => return Err(Error::config(key, "not a sweepable probe setting")),
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogRange {
    pub start: f64,
    pub stop: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub variable: String,
    #[serde(default)]
    pub values: Option<Vec<f64>>,
    #[serde(default)]
    pub log_range: Option<LogRange>,
}

impl SweepSpec {
    pub fn points(&self) -> Result<Vec<f64>> {
        match (&self.values, &self.log_range) {
            (Some(v), None) if !v.is_empty() => Ok(v.clone()),
            (None, Some(r)) => {
                if !(r.start > 0.0 && r.stop > 0.0) || r.n < 1 {
                    return Err(Error::config(
                        "sweep.log_range",
                        "needs start, stop > 0 and n >= 1",
                    ));
                }
                if r.n == 1 {
                    return Ok(vec![r.start]);
                }
                let (a, b) = (r.start.ln(), r.stop.ln());
                Ok((0..r.n)
                    .map(|i| (a + (b - a) * i as f64 / (r.n - 1) as f64).exp())
                    .collect())
            }
            _ => Err(Error::config(
                "sweep",
                "give exactly one of `values` (non-empty) or `log_range`",
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default)]
    pub base: BaseParams,
    pub protocol: Protocol,
    #[serde(default)]
    pub probe: ProbeSettings,
    pub sweep: SweepSpec,
    pub n_traj: usize,
    pub base_seed: u64,
    pub outputs: PathBuf,
}

impl ScenarioConfig {
    /// Load a scenario; a relative `base.path` is resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut cfg: ScenarioConfig = serde_json::from_str(&text)
            .map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
        if let (Some(p), Some(dir)) = (&cfg.base.path, path.parent()) {
            if p.is_relative() {
                cfg.base.path = Some(dir.join(p));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_traj < 100 {
            return Err(Error::config("n_traj", format!("{} < 100", self.n_traj)));
        }
        let v = &self.sweep.variable;
        if !PROBE_KEYS.contains(&v.as_str()) && !ParameterSet::KEYS.contains(&v.as_str()) {
            return Err(Error::config(
                "sweep.variable",
                format!("unknown key `{v}`"),
            ));
        }
        self.sweep.points()?;
        for k in self.base.overrides.keys() {
            if !ParameterSet::KEYS.contains(&k.as_str()) {
                return Err(Error::config(
                    format!("base.overrides.{k}"),
                    "unknown physics key",
                ));
            }
        }
        if self.probe.bootstrap < 100 {
            return Err(Error::config(
                "probe.bootstrap",
                "need at least 100 resamples",
            ));
        }
        Ok(())
    }

    /// Physics parameters before the sweep value is applied.
    pub fn base_params(&self) -> Result<ParameterSet> {
        let mut p = match &self.base.path {
            Some(path) => ParameterSet::load(path)
                .map_err(|e| Error::config("base.path", format!("{}: {e}", path.display())))?,
            None => default_params()?,
        };
        for (k, v) in &self.base.overrides {
            p.set(k, *v)?;
        }
        Ok(p)
    }
}

/// Built-in parameter set, or the file named by `STRB_DEFAULT_PARAMS`.
pub fn default_params() -> Result<ParameterSet> {
    match std::env::var_os(PARAMS_ENV) {
        Some(path) => ParameterSet::load(&path)
            .map_err(|e| Error::config(PARAMS_ENV, format!("{}: {e}", Path::new(&path).display()))),
        None => Ok(ParameterSet::default()),
    }
}

/// One sweep point. Analytic and empirical values share units; `NaN` marks
/// a quantity the protocol does not produce.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    #[serde(with = "nan_as_null")]
    pub sweep_value: f64,
    #[serde(with = "nan_as_null")]
    pub analytic_var: f64,
    #[serde(with = "nan_as_null")]
    pub mc_var: f64,
    #[serde(with = "nan_as_null")]
    pub mc_ci_lo: f64,
    #[serde(with = "nan_as_null")]
    pub mc_ci_hi: f64,
    #[serde(with = "nan_as_null")]
    pub xi_tilde_db: f64,
    #[serde(with = "nan_as_null")]
    pub xi_w_db: f64,
    #[serde(with = "nan_as_null")]
    pub runtime_s: f64,
    #[serde(default)]
    pub detail: PointDetail,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PointDetail {
    pub kappa_tilde_sq_a: f64,
    pub kappa_tilde_sq_b: f64,
    pub f_d: f64,
    pub min_det: Option<f64>,
    pub n_bar: Option<f64>,
    pub ground_ref: Option<f64>,
    pub xi_w_ci_db: Option<(f64, f64)>,
    pub error: Option<String>,
}

/// JSON has no NaN; absent values travel as `null`.
mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_nan() {
            s.serialize_none()
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

pub const CSV_HEADER: &str =
    "sweep_value,analytic_var,mc_var,mc_ci_lo,mc_ci_hi,xi_tilde_db,xi_w_db,runtime_s";

impl SweepRow {
    fn failed(sweep_value: f64, err: &Error) -> Self {
        SweepRow {
            sweep_value,
            analytic_var: f64::NAN,
            mc_var: f64::NAN,
            mc_ci_lo: f64::NAN,
            mc_ci_hi: f64::NAN,
            xi_tilde_db: f64::NAN,
            xi_w_db: f64::NAN,
            runtime_s: 0.0,
            detail: PointDetail {
                error: Some(err.to_string()),
                ..PointDetail::default()
            },
        }
    }

    pub fn is_ok(&self) -> bool {
        self.detail.error.is_none()
    }

    /// Shortest round-trip decimal for each value; empty for NaN.
    pub fn csv_line(&self) -> String {
        [
            self.sweep_value,
            self.analytic_var,
            self.mc_var,
            self.mc_ci_lo,
            self.mc_ci_hi,
            self.xi_tilde_db,
            self.xi_w_db,
            self.runtime_s,
        ]
        .iter()
        .map(|v| {
            if v.is_nan() {
                String::new()
            } else {
                format!("{v:?}")
            }
        })
        .collect::<Vec<_>>()
        .join(",")
    }

    pub fn from_csv_line(line: &str) -> Result<Self> {
        let vals = line
            .split(',')
            .map(|f| {
                if f.is_empty() {
                    Ok(f64::NAN)
                } else {
                    f.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Format(format!("bad CSV field `{f}`: {e}")))
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        if vals.len() != 8 {
            return Err(Error::Format(format!(
                "expected 8 CSV fields, got {}",
                vals.len()
            )));
        }
        Ok(SweepRow {
            sweep_value: vals[0],
            analytic_var: vals[1],
            mc_var: vals[2],
            mc_ci_lo: vals[3],
            mc_ci_hi: vals[4],
            xi_tilde_db: vals[5],
            xi_w_db: vals[6],
            runtime_s: vals[7],
            detail: PointDetail::default(),
        })
    }
}

/// Fully resolved inputs of one simulation point.
#[derive(Debug, Clone)]
pub struct PointSetup {
    pub schedule: PulseSchedule,
    pub coupling: SimCoupling,
    pub ensemble: crate::physics::EnsembleConfig,
    pub state: crate::sim::OscillatorState,
    pub mode_a: ModeFunction,
    pub mode_b: ModeFunction,
    pub kappa_tilde_sq_a: f64,
    pub kappa_tilde_sq_b: f64,
    /// Polarized J_x at t = 0, the ground-reference spin.
    pub jx0: f64,
}

fn photons(p: &ParameterSet) -> f64 {
    p.flux_bar * p.duration_s
}

/// Resolve parameters and probe settings into simulator inputs.
pub fn setup_point(
    protocol: Protocol,
    base: &ParameterSet,
    params: &ParameterSet,
    probe: &ProbeSettings,
) -> Result<PointSetup> {
    let two = protocol == Protocol::TwoPulseSqueezing;
    let ensemble = params.ensemble()?;
    let physical = params.coupling(probe.duty)?;
    let profile = strobe_profile(probe.duty)?;

    let omega = 2.0 * std::f64::consts::PI * probe.omega_hz;
    if !(omega > 0.0) {
        return Err(Error::config("probe.omega_hz", "must be > 0"));
    }
    let period = 1.0 / probe.omega_hz;
    let cycles_b = if two { probe.cycles_b } else { 0 };
    let tau_a = probe.cycles_a as f64 * period;
    let tau_b = cycles_b as f64 * period;
    let tau_ref = if two { tau_b } else { tau_a };
    if !(tau_ref > 0.0) {
        return Err(Error::config(
            "probe.cycles_b",
            "two-pulse runs need cycles_b >= 1",
        ));
    }
    // physical seconds per simulated second
    let compression = params.duration_s / tau_ref;

    let kt2_ref = match probe.kappa_tilde_sq {
        Some(k) => {
            let base_ens = base.ensemble()?;
            k * (ensemble.jx / base_ens.jx) * (photons(params) / photons(base))
        }
        None => physical.kappa_tilde * physical.kappa_tilde,
    };
    let kt2_a = match (two, probe.kappa_tilde_sq_a) {
        (false, _) => kt2_ref,
        (true, Some(k)) => k,
        (true, None) => kt2_ref * tau_a / tau_b,
    };

    let kind = if protocol == Protocol::ThermalCalibration {
        InitKind::UnpolarizedThermal
    } else {
        probe.init
    };
    let mut state = init_state(kind, &ensemble)?;
    let flux_bar = photons(params) / params.duration_s * compression;
    let b = profile.b;
    let beta = beta_for_kappa_tilde_sq(kt2_ref, state.jx, flux_bar * tau_ref, probe.duty);
    let flux_a = kt2_a / (beta * beta * state.jx * tau_a * b / 4.0);

    let gamma = match probe.gamma_tau {
        Some(gt) => gt / tau_ref,
        None => params.gamma_dark_hz * compression,
    };
    if !(gamma >= 0.0) {
        return Err(Error::config("gamma_tau", "must be >= 0"));
    }
    let ensemble_sim = crate::physics::EnsembleConfig {
        gamma_dark: gamma,
        ..ensemble
    };
    state.time = 0.0;

    let default_mode = if protocol == Protocol::ThermalCalibration {
        Some(ModeSpec {
            kind: ModeKind::ExpFalling,
            rate_over_gamma: 1.0,
        })
    } else {
        None
    };
    let mode = match probe.mode.or(default_mode) {
        None => ModeFunction::flat(),
        Some(m) => ModeFunction {
            kind: m.kind,
            rate: m.rate_over_gamma * gamma,
        },
    };

    let schedule = PulseSchedule {
        omega,
        steps_per_period: probe.steps_per_period,
        duty: probe.duty,
        tau_a,
        tau_b,
        flux_bar: if two { flux_bar } else { flux_a },
        flux_a: two.then_some(flux_a),
        gap: probe.gap_cycles as f64 * period,
        tensor_enabled: probe.tensor,
        depump_rate: probe.depump_rate * compression,
        probe_noise: probe.probe_noise,
    };
    schedule.cycles()?;
    Ok(PointSetup {
        schedule,
        coupling: SimCoupling {
            beta,
            w: physical.w,
            swap_sign: if physical.gamma_sw < 0.0 { -1.0 } else { 1.0 },
        },
        ensemble: ensemble_sim,
        state,
        mode_a: mode,
        mode_b: mode,
        kappa_tilde_sq_a: kt2_a,
        kappa_tilde_sq_b: if two { kt2_ref } else { 0.0 },
        jx0: ensemble.jx,
    })
}

/// Result of one protocol run with its records kept for reuse.
pub struct PointRun {
    pub setup: PointSetup,
    pub run: TwoPulseRun,
    pub psn_a: (f64, f64),
    pub psn_b: (f64, f64),
    pub row: SweepRow,
}

fn ci_of<M>(metric: M, e: &RecordEnsemble, n: usize, seed: u64) -> Result<(f64, f64)>
where
    M: Fn(&RecordEnsemble) -> Result<f64> + Sync,
{
    bootstrap_ci(metric, e, n, seed)
}

/// Run `protocol` at one point with the given seed.
pub fn run_point(
    protocol: Protocol,
    setup: PointSetup,
    n_traj: usize,
    seed: u64,
    bootstrap: usize,
    keep_cycles: bool,
) -> Result<PointRun> {
    let start = Instant::now();
    let s = &setup;
    let run = run_two_pulse_with(
        &s.schedule,
        &s.coupling,
        &s.ensemble,
        &s.state,
        &s.mode_a,
        &s.mode_b,
        n_traj,
        seed,
        RunOptions { keep_cycles },
    )?;
    let psn_a = shot_noise_quadratures(&s.schedule, Pulse::A, &s.mode_a)?;
    let psn_b = if s.schedule.tau_b > 0.0 {
        shot_noise_quadratures(&s.schedule, Pulse::B, &s.mode_b)?
    } else {
        (f64::NAN, f64::NAN)
    };
    let profile = strobe_profile(s.schedule.duty)?;
    let qa = run.q_a();
    let boot_seed = seed ^ 0x5bd1_e995;
    let kt2 = s.kappa_tilde_sq_a;
    let var_in = 2.0 * s.state.cov[0][0];

    let mut detail = PointDetail {
        kappa_tilde_sq_a: s.kappa_tilde_sq_a,
        kappa_tilde_sq_b: s.kappa_tilde_sq_b,
        f_d: run.f_d,
        min_det: run.min_det,
        ..PointDetail::default()
    };
    let nan = f64::NAN;
    let (analytic, mc, ci, xi_t, xi_w) = match protocol {
        Protocol::SinglePulseNoise | Protocol::BackActionSweep => {
            let per = if protocol == Protocol::BackActionSweep {
                kt2
            } else {
                1.0
            };
            let e = RecordEnsemble::new(qa.clone(), qa, psn_a.0, psn_a.0, 1.0)?;
            let metric =
                |e: &RecordEnsemble| Ok(oscillator_noise(sample_variance(&e.qa), e.psn_a)? / per);
            let mc = metric(&e)?;
            let ci = ci_of(metric, &e, bootstrap, boot_seed)?;
            let analytic =
                predict_variances(kt2.sqrt(), &profile, 1.0, var_in).oscillator_noise() / per;
            (analytic, mc, ci, nan, nan)
        }
        Protocol::TwoPulseSqueezing => {
            let ground = ground_reference(&s.schedule, &s.coupling, &s.ensemble, s.jx0, &s.mode_b)?;
            let e = RecordEnsemble::new(qa, run.q_b(), psn_a.0, psn_b.0, run.f_d)?;
            let rep = squeezing_report(&e, ground)?;
            let ci = ci_of(
                |e| Ok(squeezing_report(e, ground)?.xi_tilde_sq),
                &e,
                bootstrap,
                boot_seed,
            )?;
            let ci_w = ci_of(
                |e| Ok(squeezing_report(e, ground)?.xi_w_sq_db),
                &e,
                bootstrap,
                boot_seed,
            )?;
            let xi0 = conditional_squeezing(kt2.sqrt(), &profile);
            let analytic =
                total_squeezing(xi0, s.schedule.probe_noise, kt2.sqrt(), 1.0, None)?.xi_sq;
            detail.n_bar = Some(rep.n_bar);
            detail.ground_ref = Some(ground);
            detail.xi_w_ci_db = Some(ci_w);
            (
                analytic,
                rep.xi_tilde_sq,
                ci,
                rep.xi_tilde_sq_db,
                rep.xi_w_sq_db,
            )
        }
        Protocol::ThermalCalibration => {
            let qs: Vec<f64> = run.records.iter().map(|r| r.q_a_sin).collect();
            let gamma = s.ensemble.gamma_dark;
            let r = thermal_calibration_factor(gamma, s.mode_a.rate, s.schedule.tau_a);
            let jref = s.state.jx;
            // β²S_xτ·⟨J_z²⟩ = κ̃²·2⟨J_z²⟩/J_ref at D = 1
            let scale = kt2 * 2.0 / jref * r;
            let pooled = |e: &RecordEnsemble| {
                let ratio = (sample_variance(&e.qa) + sample_variance(&e.qb)) / (e.psn_a + e.psn_b);
                Ok((ratio - 1.0) / scale)
            };
            let e = RecordEnsemble::new(qa, qs, psn_a.0, psn_a.1, 1.0)?;
            let mc = pooled(&e)?;
            let ci = ci_of(pooled, &e, bootstrap, boot_seed)?;
            (s.state.cov[0][0] * jref, mc, ci, nan, nan)
        }
    };
    let row = SweepRow {
        sweep_value: nan,
        analytic_var: analytic,
        mc_var: mc,
        mc_ci_lo: ci.0,
        mc_ci_hi: ci.1,
        xi_tilde_db: xi_t,
        xi_w_db: xi_w,
        runtime_s: start.elapsed().as_secs_f64(),
        detail,
    };
    Ok(PointRun {
        setup,
        run,
        psn_a,
        psn_b,
        row,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SweepOptions {
    /// Sweep points run concurrently when > 1.
    pub jobs: usize,
    /// Record wall-clock time per point; zero otherwise so outputs are reproducible.
    pub timing: bool,
    pub format: OutputFormat,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            jobs: 1,
            timing: false,
            format: OutputFormat::Csv,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
}

/// Compute one sweep point; failures become rows carrying the error.
pub fn sweep_point(
    cfg: &ScenarioConfig,
    base: &ParameterSet,
    index: usize,
    value: f64,
    timing: bool,
) -> SweepRow {
    let attempt = || -> Result<SweepRow> {
        let mut params = base.clone();
        let mut probe = cfg.probe.clone();
        if PROBE_KEYS.contains(&cfg.sweep.variable.as_str()) {
            probe.set(&cfg.sweep.variable, value)?;
        } else {
            params.set(&cfg.sweep.variable, value)?;
        }
        let setup = setup_point(cfg.protocol, base, &params, &probe)?;
        let seed = cfg.base_seed.wrapping_add(index as u64);
        let mut row = run_point(
            cfg.protocol,
            setup,
            cfg.n_traj,
            seed,
            probe.bootstrap,
            false,
        )?
        .row;
        row.sweep_value = value;
        if !timing {
            row.runtime_s = 0.0;
        }
        Ok(row)
    };
    attempt().unwrap_or_else(|e| {
        log::warn!(
            "{}: point {index} ({} = {value}) failed: {e}",
            cfg.name,
            cfg.sweep.variable
        );
        SweepRow::failed(value, &e)
    })
}

fn point_path(dir: &Path, name: &str, index: usize) -> PathBuf {
    dir.join("points").join(format!("{name}.{index:04}.json"))
}

/// Run every sweep point and write `<outputs>/<name>.{csv,json}`.
///
/// Each finished point is also written to `<outputs>/points/`; sequential
/// CSV sweeps append rows as they finish.
pub fn run_scenario(cfg: &ScenarioConfig, opts: SweepOptions) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let base = cfg.base_params()?;
    let points = cfg.sweep.points()?;
    fs::create_dir_all(cfg.outputs.join("points"))?;
    let ext = match opts.format {
        OutputFormat::Csv => "csv",
        OutputFormat::Json => "json",
    };
    let final_path = cfg.outputs.join(format!("{}.{ext}", cfg.name));

    let save_point = |i: usize, row: &SweepRow| -> Result<()> {
        fs::write(
            point_path(&cfg.outputs, &cfg.name, i),
            serde_json::to_vec_pretty(row)?,
        )?;
        Ok(())
    };

    let rows: Vec<SweepRow> = if opts.jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.jobs)
            .build()
            .map_err(|e| Error::Range(e.to_string()))?;
        pool.install(|| {
            points
                .par_iter()
                .enumerate()
                .map(|(i, &v)| {
                    let row = sweep_point(cfg, &base, i, v, opts.timing);
                    save_point(i, &row).map(|_| row)
                })
                .collect::<Result<Vec<_>>>()
        })?
    } else {
        let mut live = match opts.format {
            OutputFormat::Csv => {
                let mut f = File::create(&final_path)?;
                writeln!(f, "{CSV_HEADER}")?;
                Some(OpenOptions::new().append(true).open(&final_path)?)
            }
            OutputFormat::Json => None,
        };
        let mut rows = Vec::with_capacity(points.len());
        for (i, &v) in points.iter().enumerate() {
            let row = sweep_point(cfg, &base, i, v, opts.timing);
            save_point(i, &row)?;
            if let Some(f) = live.as_mut() {
                writeln!(f, "{}", row.csv_line())?;
                f.flush()?;
            }
            log::info!(
                "{}: {} = {v}: mc {:.6e}",
                cfg.name,
                cfg.sweep.variable,
                row.mc_var
            );
            rows.push(row);
        }
        rows
    };
    write_rows(&final_path, &rows, opts.format)?;
    Ok(rows)
}

pub fn write_rows(path: &Path, rows: &[SweepRow], format: OutputFormat) -> Result<()> {
    let text = match format {
        OutputFormat::Csv => {
            let mut s = String::from(CSV_HEADER);
            s.push('\n');
            for r in rows {
                s.push_str(&r.csv_line());
                s.push('\n');
            }
            s
        }
        OutputFormat::Json => serde_json::to_string_pretty(rows)? + "\n",
    };
    fs::write(path, text)?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<SweepRow>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(Error::Format(format!(
            "{}: unexpected CSV header",
            path.display()
        )));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(SweepRow::from_csv_line)
        .collect()
}

/// Headline closed-form quantities, in print order.
pub fn analytics_table(
    params: &ParameterSet,
    duty: f64,
    kappa_tilde_sq: f64,
) -> Result<Vec<(&'static str, f64)>> {
    let p = strobe_profile(duty)?;
    let kt = kappa_tilde_sq.sqrt();
    let v = predict_variances(kt, &p, 1.0, 1.0);
    let c = params.coupling(duty)?;
    let cav = params.cavity()?;
    Ok(vec![
        ("duty", duty),
        ("kappa_tilde_sq", kappa_tilde_sq),
        ("sinc_pi_d", p.sinc_pd),
        ("b", p.b),
        ("c", p.c),
        ("xi0_sq", conditional_squeezing(kt, &p)),
        ("xi0_sq_db", to_db(conditional_squeezing(kt, &p))),
        ("ground_noise", v.oscillator_noise()),
        ("var_x_out", v.var_x_out),
        ("a0", c.a0),
        ("a1", c.a1),
        ("a2", c.a2),
        ("w", c.w),
        ("beta", c.beta),
        ("kappa_sq_params", c.kappa * c.kappa),
        ("kappa_tilde_sq_params", c.kappa_tilde * c.kappa_tilde),
        ("gamma_sw", c.gamma_sw),
        ("finesse", cav.finesse),
    ])
}
