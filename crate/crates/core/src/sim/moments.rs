//! Exact second moments of the linear model, propagated without sampling.
//!
//! The state vector is (X, P, q_A^cos, q_A^sin, q_B^cos, q_B^sin); every grid
//! step is an affine Gaussian map, so the unconditional covariance follows
//! Σ ← AΣAᵀ + BBᵀ. Used as an oracle for the trajectory sampler.

use serde::{Deserialize, Serialize};

use super::{
    shot_noise_exact, timeline, Mat2, ModeFunction, OscillatorState, Pulse, PulseSchedule,
    SimCoupling,
};
use crate::error::{Error, Result};
use crate::physics::EnsembleConfig;

pub type Mat6 = [[f64; 6]; 6];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub cov: Mat6,
    pub f_d: f64,
}

impl Moments {
    pub fn var_qa(&self) -> f64 {
        self.cov[2][2]
    }

    pub fn var_qb(&self) -> f64 {
        self.cov[4][4]
    }

    pub fn cov_ab(&self) -> f64 {
        self.cov[2][4]
    }

    /// Var(q_B | q_A) for the linear predictor built from q_A.
    pub fn var_qb_given_qa(&self) -> f64 {
        self.var_qb() - self.cov_ab() * self.cov_ab() / self.var_qa()
    }

    /// Unconditional covariance of (X, P) at the end of the run.
    pub fn end_cov(&self) -> Mat2 {
        [
            [self.cov[0][0], self.cov[0][1]],
            [self.cov[1][0], self.cov[1][1]],
        ]
    }
}

fn slot(pulse: Pulse) -> usize {
    match pulse {
        Pulse::A => 2,
        Pulse::B => 4,
    }
}

pub fn propagate(
    schedule: &PulseSchedule,
    coupling: &SimCoupling,
    ensemble: &EnsembleConfig,
    start: &OscillatorState,
    mode_a: &ModeFunction,
    mode_b: &ModeFunction,
) -> Result<Moments> {
    let tl = timeline(schedule, coupling, ensemble, start, mode_a, mode_b)?;
    let mut s: Mat6 = [[0.0; 6]; 6];
    // mean offsets enter as second moments about zero
    for i in 0..2 {
        for j in 0..2 {
            s[i][j] = start.cov[i][j] + start.mean[i] * start.mean[j];
        }
    }
    for st in &tl.steps {
        let t = st.transfer();
        let sa = st.a.sqrt();
        let pre = [
            [st.r2[0][0] * sa, st.r2[0][1] * sa],
            [st.r2[1][0] * sa, st.r2[1][1] * sa],
        ];
        let mut a: Mat6 = [[0.0; 6]; 6];
        for (i, row) in a.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        a[0][0] = t[0][0];
        a[0][1] = t[0][1];
        a[1][0] = t[1][0];
        a[1][1] = t[1][1];
        // noise columns: w_y, w_z, and the two dissipative inputs
        let mut b = [[0.0; 4]; 6];
        let gy = [
            pre[0][0] * st.g_y[0] + pre[0][1] * st.g_y[1],
            pre[1][0] * st.g_y[0] + pre[1][1] * st.g_y[1],
        ];
        let gz = [
            pre[0][0] * st.g_z[0] + pre[0][1] * st.g_z[1],
            pre[1][0] * st.g_z[0] + pre[1][1] * st.g_z[1],
        ];
        let sq = st.q.sqrt();
        b[0] = [gy[0], gz[0], sq, 0.0];
        b[1] = [gy[1], gz[1], 0.0, sq];
        if let (true, Some(p)) = (st.lit(), st.pulse) {
            let k = slot(p);
            for (off, wgt) in [(0, st.cw), (1, st.sw)] {
                a[k + off][0] += wgt * st.h * st.r1[0][0];
                a[k + off][1] += wgt * st.h * st.r1[0][1];
                b[k + off][0] = wgt * st.r_sigma;
            }
        }
        let mut as_: Mat6 = [[0.0; 6]; 6];
        for i in 0..6 {
            for j in 0..6 {
                as_[i][j] = (0..6).map(|k| a[i][k] * s[k][j]).sum();
            }
        }
        for i in 0..6 {
            for j in 0..6 {
                s[i][j] = (0..6).map(|k| as_[i][k] * a[j][k]).sum::<f64>()
                    + (0..4).map(|k| b[i][k] * b[j][k]).sum::<f64>();
            }
        }
    }
    if !s.iter().flatten().all(|v| v.is_finite()) {
        return Err(Error::Range("moment propagation diverged".into()));
    }
    Ok(Moments {
        cov: s,
        f_d: tl.f_d,
    })
}

/// Var/PSN − 1 of a B-pulse-only run starting from the coherent spin state
/// at J_x(0). Excess noise of a ground-state oscillator under the same probe.
pub fn ground_reference(
    schedule: &PulseSchedule,
    coupling: &SimCoupling,
    ensemble: &EnsembleConfig,
    jx0: f64,
    mode_b: &ModeFunction,
) -> Result<f64> {
    let only_b = PulseSchedule {
        tau_a: schedule.tau_b,
        tau_b: 0.0,
        gap: 0.0,
        flux_a: Some(schedule.flux_of(Pulse::B)),
        ..*schedule
    };
    let ground = OscillatorState {
        mean: [0.0; 2],
        cov: [[0.5, 0.0], [0.0, 0.5]],
        jx: jx0,
        time: 0.0,
        polarized: true,
        bath_var: 0.5,
    };
    let m = propagate(&only_b, coupling, ensemble, &ground, mode_b, mode_b)?;
    let psn = shot_noise_exact(&only_b, Pulse::A, mode_b)?;
    Ok(m.var_qa() / psn - 1.0)
}
