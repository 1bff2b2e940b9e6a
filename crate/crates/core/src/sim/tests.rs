use super::moments::{ground_reference, propagate};
use super::*;
use crate::analytics::{conditional_squeezing, predict_variances, strobe_profile};

const OMEGA: f64 = 2.0 * PI;
const JX: f64 = 1.0e6;
const FLUX: f64 = 2.0e5;

fn ensemble(gamma_dark: f64) -> EnsembleConfig {
    EnsembleConfig {
        n_at: JX / 4.0,
        orientation: 1.0,
        jx: JX,
        gamma_dark,
        t1: 1.0,
        f: 4,
    }
}

fn schedule(duty: f64, cycles_a: u32, cycles_b: u32) -> PulseSchedule {
    PulseSchedule {
        steps_per_period: 128,
        ..PulseSchedule::from_cycles(OMEGA, duty, cycles_a, cycles_b, FLUX)
    }
}

fn coupling_for(kt2: f64, s: &PulseSchedule) -> SimCoupling {
    SimCoupling {
        beta: beta_for_kappa_tilde_sq(kt2, JX, s.flux_bar * s.tau_a, s.duty),
        w: 0.0,
        swap_sign: 1.0,
    }
}

fn ground() -> OscillatorState {
    init_state(InitKind::Ground, &ensemble(0.0)).unwrap()
}

#[test]
fn rotation_is_symplectic() {
    for th in [0.0, 0.3, 2.0, -5.0] {
        let r = rotation(th);
        assert!((det(&r) - 1.0).abs() < 1e-15);
        let back = mat_mul(&rotation(-th), &r);
        assert!((back[0][0] - 1.0).abs() < 1e-15 && back[0][1].abs() < 1e-15);
    }
    // a quarter period carries X into −P
    let r = rotation(PI / 2.0);
    let v = mat_vec(&r, &[1.0, 0.0]);
    assert!(v[0].abs() < 1e-15 && (v[1] + 1.0).abs() < 1e-15);
}

#[test]
fn illumination_covers_duty_fraction() {
    for duty in [0.05, 0.15, 0.5, 1.0] {
        let n = 100;
        let dt = 1.0 / n as f64;
        let total: f64 = (0..n)
            .map(|i| illumination(i as f64 * dt, (i + 1) as f64 * dt, duty, 1.0).0 * dt)
            .sum();
        assert!((total - duty).abs() < 1e-12, "duty {duty}: {total}");
    }
    let (f, tc) = illumination(0.0, 0.01, 0.15, 1.0);
    assert!((f - 1.0).abs() < 1e-12 && (tc - 0.005).abs() < 1e-15);
    let (f, _) = illumination(0.1, 0.2, 0.15, 1.0);
    assert_eq!(f, 0.0);
}

#[test]
fn mode_functions_are_normalized() {
    let tau = 3.0;
    let n = 200_000;
    let dt = tau / n as f64;
    for mode in [
        ModeFunction::flat(),
        ModeFunction::exp_rising(0.7),
        ModeFunction::exp_falling(0.7),
        ModeFunction::exp_rising(1e-14),
    ] {
        let s: f64 = (0..n)
            .map(|i| mode.weight((i as f64 + 0.5) * dt, tau).powi(2) * dt)
            .sum();
        assert!((s - 2.0).abs() < 1e-8, "{mode:?}: {s}");
    }
}

#[test]
fn grid_errors() {
    let mut s = schedule(0.15, 10, 10);
    s.steps_per_period = 126;
    assert!(matches!(s.cycles(), Err(Error::Grid(_))));
    let mut s = schedule(0.05, 10, 10);
    s.steps_per_period = 64;
    assert!(matches!(s.cycles(), Err(Error::Grid(_))));
    let mut s = schedule(0.15, 10, 10);
    s.tau_a *= 1.01;
    assert!(matches!(s.cycles(), Err(Error::Grid(_))));
    let mut s = schedule(0.15, 10, 10);
    s.gap = 0.5 * s.period();
    assert!(matches!(s.cycles(), Err(Error::Grid(_))));
    assert!(schedule(0.15, 10, 10).cycles().is_ok());
}

#[test]
fn no_coupling_gives_shot_noise() {
    let s = schedule(0.3, 20, 0);
    let off = SimCoupling {
        beta: 0.0,
        w: 0.0,
        swap_sign: 1.0,
    };
    let m = propagate(
        &s,
        &off,
        &ensemble(0.0),
        &ground(),
        &ModeFunction::flat(),
        &ModeFunction::flat(),
    )
    .unwrap();
    let psn = shot_noise_exact(&s, Pulse::A, &ModeFunction::flat()).unwrap();
    assert!((m.var_qa() / psn - 1.0).abs() < 1e-12);
}

#[test]
fn shot_noise_scales_with_flux_and_duty() {
    // Σσ²(u cos)² = (Φ̄τ/4)·((1 + sinc πD)/2)·(2/τ)
    for duty in [0.1, 0.5, 1.0] {
        let s = schedule(duty, 30, 0);
        let psn = shot_noise_exact(&s, Pulse::A, &ModeFunction::flat()).unwrap();
        let b = strobe_profile(duty).unwrap().b;
        let expect = FLUX * b / 4.0;
        assert!(
            (psn / expect - 1.0).abs() < 2e-3,
            "duty {duty}: {psn} vs {expect}"
        );
    }
}

#[test]
fn shot_noise_mc_matches_exact() {
    let s = schedule(0.5, 5, 0);
    let exact = shot_noise_exact(&s, Pulse::A, &ModeFunction::flat()).unwrap();
    let n = 20_000;
    let mc = shot_noise_reference(&s, Pulse::A, &ModeFunction::flat(), n, 3).unwrap();
    assert!((mc / exact - 1.0).abs() < 3.0 * (2.0 / n as f64).sqrt());
}

#[test]
fn moments_follow_record_formula() {
    for kt2 in [0.25, 1.0, 4.0] {
        for duty in [0.1, 0.5, 1.0] {
            let s = schedule(duty, 100, 0);
            let c = coupling_for(kt2, &s);
            let m = propagate(
                &s,
                &c,
                &ensemble(0.0),
                &ground(),
                &ModeFunction::flat(),
                &ModeFunction::flat(),
            )
            .unwrap();
            let psn = shot_noise_exact(&s, Pulse::A, &ModeFunction::flat()).unwrap();
            let p = strobe_profile(duty).unwrap();
            let want = predict_variances(kt2.sqrt(), &p, 1.0, 1.0).oscillator_noise();
            let got = m.var_qa() / psn - 1.0;
            assert!(
                (got / want - 1.0).abs() < 0.01,
                "κ̃²={kt2} D={duty}: {got} vs {want}"
            );
        }
    }
}

#[test]
fn conditional_variance_after_one_pulse() {
    // Var(X | q_A) at the end of pulse A relative to zero-point, conditioning
    // on the demodulated sum only
    for (duty, kt2) in [(0.05, 3.0), (0.15, 1.0), (0.5, 2.0), (1.0, 2.0)] {
        let s = PulseSchedule {
            steps_per_period: 256,
            ..schedule(duty, 100, 0)
        };
        let c = coupling_for(kt2, &s);
        let flat = ModeFunction::flat();
        let m = propagate(&s, &c, &ensemble(0.0), &ground(), &flat, &flat).unwrap();
        let xi = (m.cov[0][0] - m.cov[0][2] * m.cov[0][2] / m.var_qa()) / 0.5;
        let want = conditional_squeezing(kt2.sqrt(), &strobe_profile(duty).unwrap());
        assert!((xi / want - 1.0).abs() < 1e-3, "D={duty}: {xi} vs {want}");
        // the full record carries more information than the sum
        let p = Plan::build(&s, &c, &ensemble(0.0), &ground(), &flat, &flat).unwrap();
        assert!(p.cov_end_a[0][0] / 0.5 <= xi + 1e-9);
    }
}

#[test]
fn record_conditioning_matches_limit_at_small_duty() {
    let s = PulseSchedule {
        steps_per_period: 256,
        ..schedule(0.05, 100, 100)
    };
    let c = coupling_for(3.0, &s);
    let flat = ModeFunction::flat();
    let m = propagate(&s, &c, &ensemble(0.0), &ground(), &flat, &flat).unwrap();
    let psn = shot_noise_exact(&s, Pulse::B, &flat).unwrap();
    let xi = (m.var_qb_given_qa() / psn - 1.0) / (m.var_qb() / psn - 1.0);
    let want = conditional_squeezing(3f64.sqrt(), &strobe_profile(0.05).unwrap());
    assert!((xi / want - 1.0).abs() < 0.01, "{xi} vs {want}");
}

#[test]
fn plan_respects_uncertainty_floor() {
    let s = PulseSchedule {
        tensor_enabled: true,
        depump_rate: 0.01,
        probe_noise: 0.05,
        ..schedule(0.15, 40, 40)
    };
    let c = SimCoupling {
        w: 0.094,
        swap_sign: 1.0,
        ..coupling_for(5.0, &s)
    };
    for sign in [1.0, -1.0] {
        let c = SimCoupling {
            swap_sign: sign,
            ..c
        };
        let p = Plan::build(
            &s,
            &c,
            &ensemble(0.1),
            &ground(),
            &ModeFunction::flat(),
            &ModeFunction::flat(),
        )
        .unwrap();
        assert!(p.min_det.unwrap() >= 0.25 - DET_TOL, "{:?}", p.min_det);
    }
}

#[test]
fn mc_matches_moments() {
    let s = PulseSchedule {
        tensor_enabled: true,
        depump_rate: 0.002,
        ..schedule(0.15, 20, 20)
    };
    let c = SimCoupling {
        w: 0.094,
        swap_sign: 1.0,
        ..coupling_for(2.0, &s)
    };
    let ens = ensemble(0.05);
    let flat = ModeFunction::flat();
    let start = OscillatorState {
        mean: [0.3, -0.2],
        ..ground()
    };
    let n = 20_000;
    let run = run_two_pulse_with(
        &s,
        &c,
        &ens,
        &start,
        &flat,
        &flat,
        n,
        11,
        RunOptions::default(),
    )
    .unwrap();
    let m = propagate(&s, &c, &ens, &start, &flat, &flat).unwrap();
    let qa = run.q_a();
    let qb = run.q_b();
    let se = (2.0 / n as f64).sqrt();
    let mom2 = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    assert!((mom2(&qa) / m.var_qa() - 1.0).abs() < 4.0 * se);
    assert!((mom2(&qb) / m.var_qb() - 1.0).abs() < 4.0 * se);
    let cross = qa.iter().zip(&qb).map(|(a, b)| a * b).sum::<f64>() / n as f64;
    assert!((cross - m.cov_ab()).abs() < 4.0 * se * (m.var_qa() * m.var_qb()).sqrt());
    let end = run.unconditional_end_cov();
    let me = m.end_cov();
    // second moments about zero include the decayed mean
    let mu = run.records.iter().map(|r| r.final_mean[0]).sum::<f64>() / n as f64;
    assert!(((end[0][0] + mu * mu) / me[0][0] - 1.0).abs() < 4.0 * se);
    assert!((run.f_d - (-0.002 * s.tau_a).exp()).abs() < 1e-15);
}

#[test]
fn runs_are_independent_of_thread_count() {
    let s = schedule(0.15, 5, 5);
    let c = coupling_for(1.0, &s);
    let flat = ModeFunction::flat();
    let go = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| {
                run_two_pulse_with(
                    &s,
                    &c,
                    &ensemble(0.0),
                    &ground(),
                    &flat,
                    &flat,
                    64,
                    5,
                    RunOptions::default(),
                )
                .unwrap()
            })
    };
    let (a, b) = (go(1), go(4));
    assert_eq!(a.records, b.records);
    assert_eq!(a.records[7].stream, 7);
}

#[test]
fn kept_cycles_sum_to_pulse_records() {
    let s = schedule(0.5, 4, 3);
    let c = coupling_for(1.0, &s);
    let flat = ModeFunction::flat();
    let run = run_two_pulse_with(
        &s,
        &c,
        &ensemble(0.0),
        &ground(),
        &flat,
        &flat,
        3,
        1,
        RunOptions { keep_cycles: true },
    )
    .unwrap();
    for r in &run.records {
        let y = r.per_cycle.as_ref().unwrap();
        assert_eq!(y.len(), 7);
        let qa: f64 = y[..4].iter().map(|c| c[0]).sum();
        let qb_sin: f64 = y[4..].iter().map(|c| c[1]).sum();
        assert!((qa - r.q_a).abs() < 1e-9 * qa.abs().max(1.0));
        assert!((qb_sin - r.q_b_sin).abs() < 1e-9 * qb_sin.abs().max(1.0));
    }
}

#[test]
fn unpolarized_state_variance() {
    let e = ensemble(0.0);
    let s = init_state(InitKind::UnpolarizedThermal, &e).unwrap();
    assert!((s.cov[0][0] - 45.0 / 48.0).abs() < 1e-15);
    assert!(!s.polarized);
    assert_eq!(s.jx, e.jx_full());
    let t = init_state(InitKind::ThermalOccupancy { n_bar: 0.2 }, &e).unwrap();
    assert!((t.n_bar() - 0.2).abs() < 1e-15);
    assert!(init_state(InitKind::ThermalOccupancy { n_bar: -0.1 }, &e).is_err());
}

#[test]
fn spin_temperature_matches_orientation() {
    for o in [0.0, 0.3, 0.9, 0.995, 1.0] {
        let p = spin_temperature_populations(o, 4).unwrap();
        assert_eq!(p.len(), 9);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let m: f64 = p
            .iter()
            .enumerate()
            .map(|(i, p)| p * (i as f64 - 4.0))
            .sum();
        assert!((m / 4.0 + o).abs() < 1e-9, "{o}: {m}");
    }
    assert!(spin_temperature_populations(1.2, 4).is_err());
}

#[test]
fn ground_reference_matches_formula() {
    let s = schedule(0.15, 30, 30);
    let c = coupling_for(1.5, &s);
    let g = ground_reference(&s, &c, &ensemble(0.0), JX, &ModeFunction::flat()).unwrap();
    let want = predict_variances(1.5f64.sqrt(), &strobe_profile(0.15).unwrap(), 1.0, 1.0)
        .oscillator_noise();
    assert!((g / want - 1.0).abs() < 0.02, "{g} vs {want}");
}

#[test]
fn dark_decay_relaxes_to_bath() {
    let e = ensemble(0.5);
    let mut st = init_state(InitKind::UnpolarizedThermal, &e).unwrap();
    st.cov = [[3.0, 0.0], [0.0, 3.0]];
    let s = PulseSchedule {
        flux_bar: 0.0,
        ..schedule(0.5, 10, 0)
    };
    let off = SimCoupling {
        beta: 0.0,
        w: 0.0,
        swap_sign: 1.0,
    };
    let m = propagate(
        &s,
        &off,
        &e,
        &st,
        &ModeFunction::flat(),
        &ModeFunction::flat(),
    )
    .unwrap();
    let bath = st.bath_var;
    let want = bath + (3.0 - bath) * (-2.0 * 0.5 * s.tau_a).exp();
    assert!((m.end_cov()[0][0] / want - 1.0).abs() < 1e-10);
}

#[test]
fn step_period_keeps_floor() {
    let s = PulseSchedule {
        tensor_enabled: true,
        ..schedule(0.15, 1, 0)
    };
    let c = CouplingSet {
        w: 0.094,
        gamma_sw: 1.0,
        ..CouplingSet::from_beta(coupling_for(3.0, &s).beta, JX, FLUX * s.tau_a, 0.15)
    };
    let mut st = ground();
    let mut rng = trajectory_rng(1, 0);
    for _ in 0..10 {
        let (next, _, _) = step_period(&st, &s, &c, &ensemble(0.0), &mut rng).unwrap();
        st = next;
    }
    assert!(det(&st.cov) >= 0.25 - DET_TOL);
    assert!((st.time - 10.0 * s.period()).abs() < 1e-12);
}

#[test]
fn tensor_term_damps_at_swap_rate() {
    let s = PulseSchedule {
        tensor_enabled: true,
        ..schedule(0.15, 30, 0)
    };
    let w = 0.094;
    let c = SimCoupling {
        w,
        swap_sign: 1.0,
        ..coupling_for(4.0, &s)
    };
    let flat = ModeFunction::flat();
    let tl = timeline(&s, &c, &ensemble(0.0), &ground(), &flat, &flat).unwrap();
    let mut m = [1.0, 0.0];
    for st in &tl.steps {
        m = mat_vec(&st.transfer(), &m);
    }
    // amplitude decays as exp(−β²J_x|w|·N_ph/4)
    let g2 = c.beta * c.beta * JX;
    let want = (-g2 * w * s.flux_bar * s.tau_a / 4.0).exp();
    let amp = (m[0] * m[0] + m[1] * m[1]).sqrt();
    // the per-step map is exact in the slice, so the grid error is O(λ) per step
    assert!((amp / want - 1.0).abs() < 1e-4, "{amp} vs {want}");
    assert!(want < 0.99);
}
