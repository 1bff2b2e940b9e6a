//! Estimators turning demodulated records into normalized noise, conditional
//! variance and squeezing metrics.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::trajectory_rng;

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Unbiased sample covariance (n − 1 denominator).
pub fn sample_covariance(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (mean(x), mean(y));
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - mx) * (b - my))
        .sum::<f64>()
        / (x.len() as f64 - 1.0)
}

pub fn sample_variance(x: &[f64]) -> f64 {
    sample_covariance(x, x)
}

pub fn to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionalVariance {
    pub var_b: f64,
    pub cov_ab: f64,
    pub var_b_given_a: f64,
}

/// Residual variance of the least-squares linear predictor of q_B from q_A.
pub fn conditional_variance(qa: &[f64], qb: &[f64]) -> Result<ConditionalVariance> {
    if qa.len() != qb.len() {
        return Err(Error::Degenerate(format!(
            "record lengths differ: {} vs {}",
            qa.len(),
            qb.len()
        )));
    }
    if qa.len() < 2 {
        return Err(Error::Degenerate("need at least two records".into()));
    }
    let var_a = sample_variance(qa);
    if !(var_a > 0.0) {
        return Err(Error::Degenerate("Var(q_A) = 0".into()));
    }
    let var_b = sample_variance(qb);
    let cov_ab = sample_covariance(qa, qb);
    // Cauchy–Schwarz holds for the plug-in estimates, so only rounding can go negative
    let var_b_given_a = (var_b - cov_ab * cov_ab / var_a).clamp(0.0, var_b.max(0.0));
    Ok(ConditionalVariance {
        var_b,
        cov_ab,
        var_b_given_a,
    })
}

/// Var(q)/PSN − 1. Negative values are returned as is and logged.
pub fn oscillator_noise(var_record: f64, psn: f64) -> Result<f64> {
    if !(psn > 0.0) {
        return Err(Error::domain("psn", psn, "> 0"));
    }
    let v = var_record / psn - 1.0;
    if v < 0.0 {
        log::warn!("negative oscillator noise {v:.4e}: record variance below shot noise");
    }
    Ok(v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordEnsemble {
    pub qa: Vec<f64>,
    pub qb: Vec<f64>,
    pub psn_a: f64,
    pub psn_b: f64,
    /// J_x(τ_A)/J_x(0)
    pub f_d: f64,
}

impl RecordEnsemble {
    pub fn new(qa: Vec<f64>, qb: Vec<f64>, psn_a: f64, psn_b: f64, f_d: f64) -> Result<Self> {
        let e = RecordEnsemble {
            qa,
            qb,
            psn_a,
            psn_b,
            f_d,
        };
        e.validate()?;
        Ok(e)
    }

    pub fn validate(&self) -> Result<()> {
        if self.qa.len() != self.qb.len() || self.qa.len() < 2 {
            return Err(Error::Degenerate(format!(
                "need equal-length records of at least 2, got {} and {}",
                self.qa.len(),
                self.qb.len()
            )));
        }
        if !(self.psn_a > 0.0) {
            return Err(Error::domain("psn_a", self.psn_a, "> 0"));
        }
        if !(self.psn_b > 0.0) {
            return Err(Error::domain("psn_b", self.psn_b, "> 0"));
        }
        if !(self.f_d > 0.0 && self.f_d <= 1.0) {
            return Err(Error::domain("f_d", self.f_d, "in (0, 1]"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.qa.len()
    }

    pub fn is_empty(&self) -> bool {
        self.qa.is_empty()
    }

    /// Same ensemble with records drawn at the given indices.
    pub fn resample(&self, idx: &[usize]) -> RecordEnsemble {
        RecordEnsemble {
            qa: idx.iter().map(|&i| self.qa[i]).collect(),
            qb: idx.iter().map(|&i| self.qb[i]).collect(),
            ..*self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SqueezingReport {
    pub var_xm_a: f64,
    pub var_xm_b: f64,
    pub var_xm_b_given_a: f64,
    pub xi_tilde_sq: f64,
    pub xi_tilde_sq_db: f64,
    pub xi_w_sq: f64,
    pub xi_w_sq_db: f64,
    /// Occupancy from Var(x_m,A)/Var(x_m)₀ = 1 + n̄.
    pub n_bar: f64,
    /// Same ratio read with Var(X) alone carrying the excitation: (ratio − 1)/2.
    pub n_bar_half: f64,
    pub ground_ref: f64,
    pub f_d: f64,
}

pub fn squeezing_report(records: &RecordEnsemble, ground_ref: f64) -> Result<SqueezingReport> {
    records.validate()?;
    if !(ground_ref > 0.0) {
        return Err(Error::domain("ground_ref", ground_ref, "> 0"));
    }
    let cv = conditional_variance(&records.qa, &records.qb)?;
    let var_xm_a = oscillator_noise(sample_variance(&records.qa), records.psn_a)?;
    let var_xm_b = oscillator_noise(cv.var_b, records.psn_b)?;
    let var_xm_b_given_a = oscillator_noise(cv.var_b_given_a, records.psn_b)?;
    let f_d = records.f_d;
    let xi_tilde_sq = var_xm_b_given_a / (var_xm_b * f_d);
    let xi_w_sq = var_xm_b_given_a / (f_d * f_d * ground_ref);
    let ratio = var_xm_a / ground_ref;
    Ok(SqueezingReport {
        var_xm_a,
        var_xm_b,
        var_xm_b_given_a,
        xi_tilde_sq,
        xi_tilde_sq_db: to_db(xi_tilde_sq),
        xi_w_sq,
        xi_w_sq_db: to_db(xi_w_sq),
        n_bar: ratio - 1.0,
        n_bar_half: (ratio - 1.0) / 2.0,
        ground_ref,
        f_d,
    })
}

/// Percentile bootstrap 68% interval (16th and 84th percentiles).
///
/// Resample `k` draws its indices from ChaCha stream `k` of `seed`, so the
/// first n resamples are shared between runs with different `n_resamples`.
pub fn bootstrap_ci<M>(
    metric: M,
    records: &RecordEnsemble,
    n_resamples: usize,
    seed: u64,
) -> Result<(f64, f64)>
where
    M: Fn(&RecordEnsemble) -> Result<f64> + Sync,
{
    if n_resamples < 100 {
        return Err(Error::Range(format!(
            "n_resamples = {n_resamples}, need at least 100"
        )));
    }
    records.validate()?;
    let n = records.len();
    let mut stats: Vec<f64> = (0..n_resamples as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = trajectory_rng(seed, k);
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            metric(&records.resample(&idx))
        })
        .collect::<Result<Vec<f64>>>()?;
    stats.retain(|v| v.is_finite());
    if stats.is_empty() {
        return Err(Error::Degenerate("no finite bootstrap statistics".into()));
    }
    stats.sort_by(f64::total_cmp);
    Ok((percentile(&stats, 0.16), percentile(&stats, 0.84)))
}

/// Linear interpolation between order statistics of sorted data.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let j = (i + 1).min(sorted.len() - 1);
    sorted[i] + (pos - i as f64) * (sorted[j] - sorted[i])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportJson {
    pub var_xm_a: f64,
    pub var_xm_b: f64,
    pub var_xm_b_given_a: f64,
    pub xi_tilde_sq_db: f64,
    pub xi_w_sq_db: f64,
    pub n_bar: f64,
    pub f_d: f64,
    /// Bootstrap interval on ξ_W² in dB.
    pub ci_lo_db: f64,
    pub ci_hi_db: f64,
}

pub fn report_json(
    records: &RecordEnsemble,
    ground_ref: f64,
    n_resamples: usize,
    seed: u64,
) -> Result<ReportJson> {
    let r = squeezing_report(records, ground_ref)?;
    let (lo, hi) = bootstrap_ci(
        |e| squeezing_report(e, ground_ref).map(|s| s.xi_w_sq_db),
        records,
        n_resamples,
        seed,
    )?;
    Ok(ReportJson {
        var_xm_a: r.var_xm_a,
        var_xm_b: r.var_xm_b,
        var_xm_b_given_a: r.var_xm_b_given_a,
        xi_tilde_sq_db: r.xi_tilde_sq_db,
        xi_w_sq_db: r.xi_w_sq_db,
        n_bar: r.n_bar,
        f_d: r.f_d,
        ci_lo_db: lo,
        ci_hi_db: hi,
    })
}
